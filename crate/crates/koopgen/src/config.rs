//! Declarative pipeline configuration.
//!
//! A run is described by a single flat, typed key-value file (TOML with no
//! tables), so configs stay language-neutral and diff-friendly. Every key
//! has a documented unit; [`PipelineConfig::to_config_string`] emits a
//! fully commented template that parses back to the same value.
//!
//! Defaults reproduce the full-scale torus-rotation experiment; the
//! [`PipelineConfig::desk`] preset scales any configuration down to a
//! workstation/CI footprint (N=5000, L=50, 1000 test samples).

use crate::dynamics::{FlowSystem, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::kernels::{DEFAULT_GRID_POINTS, DEFAULT_PILOT_EXPONENT, MIN_GRID_POINTS};
use serde::{Deserialize, Serialize};

fn default_system() -> String {
    "torus_rotation".into()
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_sigma() -> f64 {
    10.0
}
fn default_rho() -> f64 {
    28.0
}
fn default_beta() -> f64 {
    8.0 / 3.0
}
fn default_n() -> usize {
    60_000
}
fn default_dt() -> f64 {
    7.0f64.sqrt()
}
fn default_spinup() -> usize {
    0
}
fn default_substeps() -> usize {
    1
}
fn default_seed() -> u64 {
    1
}
fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}
fn default_pilot_exponent() -> f64 {
    DEFAULT_PILOT_EXPONENT
}
fn default_pilot_epsilon() -> f64 {
    0.0
}
fn default_l() -> usize {
    400
}
fn default_z() -> f64 {
    0.1
}
fn default_tau() -> f64 {
    3e-3
}
fn default_test_n() -> usize {
    2000
}
fn default_test_dt() -> f64 {
    0.01
}
fn default_test_seed() -> u64 {
    2
}
fn default_export_modes() -> Vec<usize> {
    vec![0, 1]
}
fn default_max_lag() -> f64 {
    20.0
}
fn default_out_dir() -> String {
    "runs/torus_rotation".into()
}
fn default_cache() -> bool {
    true
}
fn default_dump_matrices() -> bool {
    false
}

/// Everything a pipeline run needs, as one flat key set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dynamical system: `torus_rotation`, `stepanoff`, or `lorenz63`.
    #[serde(default = "default_system")]
    pub system: String,
    /// Frequency/shear parameter of the torus flows (radians per time).
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Lorenz 63 Prandtl parameter (dimensionless; `lorenz63` only).
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Lorenz 63 Rayleigh parameter (dimensionless; `lorenz63` only).
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Lorenz 63 geometric parameter (dimensionless; `lorenz63` only).
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Number of training samples.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Sampling interval of the training trajectory (time units).
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Leading samples integrated and discarded before recording.
    #[serde(default = "default_spinup")]
    pub spinup: usize,
    /// Integrator substeps per sampling interval.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// RNG seed for the training initial condition.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Bandwidth tuning grid resolution (log-spaced candidate scales).
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Exponent of the variable-bandwidth function (dimensionless).
    #[serde(default = "default_pilot_exponent")]
    pub pilot_exponent: f64,
    /// Pilot density kernel scale; 0 selects it automatically.
    #[serde(default = "default_pilot_epsilon")]
    pub pilot_epsilon: f64,
    /// Number of nonconstant basis functions (must be even).
    #[serde(default = "default_l")]
    pub l: usize,
    /// Resolvent regularization parameter (inverse time units).
    #[serde(default = "default_z")]
    pub z: f64,
    /// Semigroup damping time (time units).
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Number of held-out test samples.
    #[serde(default = "default_test_n")]
    pub test_n: usize,
    /// Sampling interval of the test trajectory (time units).
    #[serde(default = "default_test_dt")]
    pub test_dt: f64,
    /// RNG seed for the test initial condition.
    #[serde(default = "default_test_seed")]
    pub test_seed: u64,
    /// Spectrum rows (by energy rank) evaluated on trajectories.
    #[serde(default = "default_export_modes")]
    pub export_modes: Vec<usize>,
    /// Autocorrelation horizon (time units of the test trajectory).
    #[serde(default = "default_max_lag")]
    pub max_lag: f64,
    /// Artifact directory.
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    /// Reuse artifacts whose content hashes match the staged inputs.
    #[serde(default = "default_cache")]
    pub cache: bool,
    /// Also export the dense generator and eigenproblem matrices.
    #[serde(default = "default_dump_matrices")]
    pub dump_matrices: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config must parse to defaults")
    }
}

impl PipelineConfig {
    /// Full-scale defaults for a named system.
    pub fn for_system(system: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.system = system.to_string();
        cfg.out_dir = format!("runs/{system}");
        match system {
            "torus_rotation" => {}
            "stepanoff" => {
                cfg.dt = 2.0;
                cfg.tau = 5e-5;
                cfg.l = 800;
                cfg.substeps = 20;
            }
            "lorenz63" => {
                cfg.n = 80_000;
                cfg.dt = 3.0;
                cfg.tau = 1e-5;
                cfg.l = 1000;
                cfg.spinup = 1000;
                cfg.substeps = 300;
            }
            other => {
                return Err(Error::Validation(format!(
                    "unknown system `{other}` (expected torus_rotation, stepanoff, or lorenz63)"
                )))
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Scale a configuration down to the workstation/CI preset.
    pub fn desk(mut self) -> Self {
        self.n = 5000;
        self.l = 50;
        self.test_n = 1000;
        self.max_lag = 10.0;
        self
    }

    /// Parse a flat TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The dynamical system this configuration describes.
    pub fn to_flow_system(&self) -> Result<FlowSystem> {
        match self.system.as_str() {
            "torus_rotation" => Ok(FlowSystem::TorusRotation { alpha: self.alpha }),
            "stepanoff" => Ok(FlowSystem::Stepanoff { alpha: self.alpha }),
            "lorenz63" => Ok(FlowSystem::Lorenz63 {
                sigma: self.sigma,
                rho: self.rho,
                beta: self.beta,
            }),
            other => Err(Error::Validation(format!(
                "unknown system `{other}` (expected torus_rotation, stepanoff, or lorenz63)"
            ))),
        }
    }

    /// Number of autocorrelation rows implied by `max_lag` and `test_dt`:
    /// lags `k dt` for `k = 0 .. max_lag/test_dt`.
    pub fn autocorr_rows(&self) -> usize {
        (self.max_lag / self.test_dt).round() as usize
    }

    /// Check every invariant; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        self.to_flow_system()?;
        let positive = |key: &str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Validation(format!("`{key}` must be positive, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("sigma", self.sigma)?;
        positive("rho", self.rho)?;
        positive("beta", self.beta)?;
        positive("dt", self.dt)?;
        positive("z", self.z)?;
        positive("test_dt", self.test_dt)?;
        positive("max_lag", self.max_lag)?;
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::Validation(format!(
                "`tau` must be nonnegative, got {}",
                self.tau
            )));
        }
        if !(self.pilot_exponent.is_finite()) {
            return Err(Error::Validation("`pilot_exponent` must be finite".into()));
        }
        if !(self.pilot_epsilon.is_finite() && self.pilot_epsilon >= 0.0) {
            return Err(Error::Validation(
                "`pilot_epsilon` must be nonnegative (0 = auto)".into(),
            ));
        }
        if self.n == 0 || self.test_n == 0 || self.substeps == 0 {
            return Err(Error::Validation(
                "`n`, `test_n`, and `substeps` must be positive".into(),
            ));
        }
        if self.grid_points < MIN_GRID_POINTS {
            return Err(Error::Validation(format!(
                "`grid_points` must be at least {MIN_GRID_POINTS}, got {}",
                self.grid_points
            )));
        }
        if self.l == 0 || self.l % 2 != 0 {
            return Err(Error::Validation(format!(
                "`l` must be even and positive (conjugate pairs fill the spectrum), got {}",
                self.l
            )));
        }
        if self.l + 1 > self.n {
            return Err(Error::Validation(format!(
                "`l` = {} requests more basis functions than the {} samples support",
                self.l, self.n
            )));
        }
        if self.export_modes.is_empty() {
            return Err(Error::Validation(
                "`export_modes` must select at least one spectrum row".into(),
            ));
        }
        for &j in &self.export_modes {
            if j >= self.l {
                return Err(Error::Validation(format!(
                    "`export_modes` entry {j} out of range: the spectrum has {} rows",
                    self.l
                )));
            }
        }
        let rows = self.autocorr_rows();
        if rows == 0 {
            return Err(Error::Validation(format!(
                "`max_lag` = {} spans no whole lag step of `test_dt` = {}",
                self.max_lag, self.test_dt
            )));
        }
        if rows > self.test_n {
            return Err(Error::Validation(format!(
                "`max_lag` = {} needs {rows} lag rows but `test_n` = {} samples \
                 cannot support lags past {}",
                self.max_lag,
                self.test_n,
                (self.test_n - 1) as f64 * self.test_dt
            )));
        }
        if self.out_dir.is_empty() {
            return Err(Error::Validation("`out_dir` must not be empty".into()));
        }
        Ok(())
    }

    /// Render as a commented flat TOML document. Guaranteed to parse back
    /// to `self`.
    pub fn to_config_string(&self) -> String {
        let f = fmt_float;
        let modes = self
            .export_modes
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        format!(
            "\
# Dynamical system: torus_rotation | stepanoff | lorenz63.
system = \"{system}\"
# Frequency/shear parameter of the torus flows (radians per time).
alpha = {alpha}
# Lorenz 63 parameters (dimensionless; used only when system = \"lorenz63\").
sigma = {sigma}
rho = {rho}
beta = {beta}
# Training trajectory: samples, sampling interval (time units), discarded
# leading samples, integrator substeps per interval, and RNG seed.
n = {n}
dt = {dt}
spinup = {spinup}
substeps = {substeps}
seed = {seed}
# Kernel bandwidth tuning: grid resolution, variable-bandwidth exponent,
# and pilot kernel scale (0 = choose automatically).
grid_points = {grid_points}
pilot_exponent = {pilot_exponent}
pilot_epsilon = {pilot_epsilon}
# Spectral approximation: nonconstant basis size (even), resolvent
# regularization (inverse time), semigroup damping time (time units).
l = {l}
z = {z}
tau = {tau}
# Held-out test trajectory: samples, sampling interval (time units), seed.
test_n = {test_n}
test_dt = {test_dt}
test_seed = {test_seed}
# Spectrum rows (by energy rank) to evaluate along trajectories, and the
# autocorrelation horizon (time units).
export_modes = [{modes}]
max_lag = {max_lag}
# Artifact directory, cache policy, and dense-matrix export toggle.
out_dir = \"{out_dir}\"
cache = {cache}
dump_matrices = {dump_matrices}
",
            system = self.system,
            alpha = f(self.alpha),
            sigma = f(self.sigma),
            rho = f(self.rho),
            beta = f(self.beta),
            n = self.n,
            dt = f(self.dt),
            spinup = self.spinup,
            substeps = self.substeps,
            seed = self.seed,
            grid_points = self.grid_points,
            pilot_exponent = f(self.pilot_exponent),
            pilot_epsilon = f(self.pilot_epsilon),
            l = self.l,
            z = f(self.z),
            tau = f(self.tau),
            test_n = self.test_n,
            test_dt = f(self.test_dt),
            test_seed = self.test_seed,
            modes = modes,
            max_lag = f(self.max_lag),
            out_dir = self.out_dir,
            cache = self.cache,
            dump_matrices = self.dump_matrices,
        )
    }
}

/// Shortest-roundtrip float formatting that always parses as a TOML float.
fn fmt_float(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') || s.contains('E') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_describe_the_full_scale_torus_run() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.system, "torus_rotation");
        assert_eq!(cfg.n, 60_000);
        assert_eq!(cfg.dt, 7.0f64.sqrt());
        assert_eq!(cfg.alpha, 30.0f64.sqrt());
        assert_eq!(cfg.l, 400);
        assert_eq!(cfg.z, 0.1);
        assert_eq!(cfg.tau, 3e-3);
        assert_eq!(cfg.test_n, 2000);
        assert_eq!(cfg.test_dt, 0.01);
        cfg.validate().unwrap();
    }

    #[test]
    fn per_system_defaults_follow_the_experimental_protocol() {
        let s = PipelineConfig::for_system("stepanoff").unwrap();
        assert_eq!((s.dt, s.tau, s.l), (2.0, 5e-5, 800));
        let lz = PipelineConfig::for_system("lorenz63").unwrap();
        assert_eq!((lz.n, lz.dt, lz.tau, lz.l, lz.spinup), (80_000, 3.0, 1e-5, 1000, 1000));
        assert!(PipelineConfig::for_system("circle").is_err());
    }

    #[test]
    fn desk_preset_scales_down() {
        let cfg = PipelineConfig::for_system("lorenz63").unwrap().desk();
        assert_eq!((cfg.n, cfg.l, cfg.test_n), (5000, 50, 1000));
        cfg.validate().unwrap();
        // The autocorrelation horizon still covers a Lyapunov time.
        assert!(cfg.max_lag >= 1.1);
        assert_eq!(cfg.autocorr_rows(), 1000);
    }

    #[test]
    fn config_string_round_trips_exactly() {
        for system in ["torus_rotation", "stepanoff", "lorenz63"] {
            let mut cfg = PipelineConfig::for_system(system).unwrap();
            cfg.export_modes = vec![0, 3, 7];
            cfg.pilot_epsilon = 0.35;
            cfg.dump_matrices = true;
            let text = cfg.to_config_string();
            let back = PipelineConfig::from_toml_str(&text).unwrap();
            assert_eq!(cfg, back);
        }
        // Irrational defaults survive the text format bitwise.
        let cfg = PipelineConfig::default();
        let back = PipelineConfig::from_toml_str(&cfg.to_config_string()).unwrap();
        assert_eq!(cfg.dt, back.dt);
        assert_eq!(cfg.alpha, back.alpha);
    }

    #[test]
    fn empty_document_parses_to_defaults() {
        let cfg = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        // Partial documents override only what they mention.
        let cfg = PipelineConfig::from_toml_str("l = 16\nseed = 9\n").unwrap();
        assert_eq!(cfg.l, 16);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.n, 60_000);
    }

    #[test]
    fn validation_names_the_offending_key() {
        let mut cfg = PipelineConfig::default();
        cfg.l = 7;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("`l`"), "{err}");

        let mut cfg = PipelineConfig::default();
        cfg.z = 0.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("`z`"));

        let mut cfg = PipelineConfig::default();
        cfg.tau = -1.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("`tau`"));

        let mut cfg = PipelineConfig::default();
        cfg.export_modes = vec![400];
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("export_modes"));

        // Lag horizon must fit inside the test trajectory.
        let mut cfg = PipelineConfig::default();
        cfg.test_n = 100;
        cfg.max_lag = 20.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("max_lag"));

        let mut cfg = PipelineConfig::default();
        cfg.system = "lorenz".into();
        assert!(cfg.validate().is_err());

        // Unknown keys are rejected, not silently ignored.
        assert!(PipelineConfig::from_toml_str("epsilon = 1.0\n").is_err());
    }

    #[test]
    fn autocorr_row_example() {
        // 20 time units at a 0.01 sampling interval = 2000 lag rows.
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.autocorr_rows(), 2000);
    }
}
