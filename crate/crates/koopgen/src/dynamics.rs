//! Benchmark dynamical systems, trajectory integration, and embeddings.
//!
//! Three ergodic flows are provided: a quasiperiodic rotation on the 2-torus
//! (pure point generator spectrum on a frequency lattice), the Stepanoff flow
//! (a fixed-point-bearing, divergence-free torus flow), and the Lorenz 63
//! system (mixing, with an absolutely continuous spectral component). The
//! torus systems are observed through the flat embedding of T^2 into R^4;
//! Lorenz 63 is observed in its native coordinates.
//!
//! Sampled trajectories are produced either by the exact flow map (available
//! for the rigid rotation, whose vector field is constant) or by a fixed-step
//! classical Runge-Kutta integrator with configurable substeps per sample
//! interval and a bounding-box divergence guard.

use crate::error::{Error, Result};
use rand::Rng;
use std::f64::consts::TAU;

/// Default frequency-ratio parameter for the torus systems, `sqrt(30)`.
///
/// The irrational ratio keeps both torus flows ergodic (no resonant lattice
/// line `l1 + l2*alpha = 0` with integer `l`).
pub const DEFAULT_ALPHA: f64 = 5.477225575051661;

/// Maximum state dimension across all supported systems.
const MAX_DIM: usize = 3;

/// A benchmark flow together with its observation map.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowSystem {
    /// Rigid rotation on T^2 with frequency vector `(1, alpha)`.
    TorusRotation {
        /// Second frequency component; irrational for ergodicity.
        alpha: f64,
    },
    /// Stepanoff flow on T^2: ergodic, divergence-free, with a fixed point
    /// at the origin where the invariant density vanishes.
    Stepanoff {
        /// Frequency-ratio parameter, as in the rigid rotation.
        alpha: f64,
    },
    /// Lorenz 63 system in R^3 with the classical parameters.
    Lorenz63 {
        /// Prandtl-like parameter (classically 10).
        sigma: f64,
        /// Rayleigh-like parameter (classically 28).
        rho: f64,
        /// Geometric parameter (classically 8/3).
        beta: f64,
    },
}

impl FlowSystem {
    /// Rigid torus rotation with the default `alpha`.
    pub fn torus_rotation_default() -> Self {
        FlowSystem::TorusRotation {
            alpha: DEFAULT_ALPHA,
        }
    }

    /// Stepanoff flow with the default `alpha`.
    pub fn stepanoff_default() -> Self {
        FlowSystem::Stepanoff {
            alpha: DEFAULT_ALPHA,
        }
    }

    /// Lorenz 63 with the classical parameters (10, 28, 8/3).
    pub fn lorenz63_default() -> Self {
        FlowSystem::Lorenz63 {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }

    /// Stable identifier used in configuration files and artifact sidecars.
    pub fn name(&self) -> &'static str {
        match self {
            FlowSystem::TorusRotation { .. } => "torus_rotation",
            FlowSystem::Stepanoff { .. } => "stepanoff",
            FlowSystem::Lorenz63 { .. } => "lorenz63",
        }
    }

    /// Dimension of the state space (2 for the torus flows, 3 for Lorenz).
    pub fn state_dim(&self) -> usize {
        match self {
            FlowSystem::TorusRotation { .. } | FlowSystem::Stepanoff { .. } => 2,
            FlowSystem::Lorenz63 { .. } => 3,
        }
    }

    /// Dimension of the observation space (4 for the flat torus embedding,
    /// 3 for Lorenz in native coordinates).
    pub fn data_dim(&self) -> usize {
        match self {
            FlowSystem::TorusRotation { .. } | FlowSystem::Stepanoff { .. } => 4,
            FlowSystem::Lorenz63 { .. } => 3,
        }
    }

    /// Whether states live on the torus and should be wrapped into `[0, tau)`.
    pub fn is_periodic(&self) -> bool {
        matches!(
            self,
            FlowSystem::TorusRotation { .. } | FlowSystem::Stepanoff { .. }
        )
    }

    /// Default bounding box half-width for the divergence guard, if any.
    /// The torus systems are compact and need none.
    pub fn default_bound(&self) -> Option<f64> {
        match self {
            FlowSystem::Lorenz63 { .. } => Some(1e3),
            _ => None,
        }
    }

    /// Evaluate the generating vector field at `x`, writing into `out`.
    fn vector_field_into(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            FlowSystem::TorusRotation { alpha } => {
                out[0] = 1.0;
                out[1] = alpha;
            }
            FlowSystem::Stepanoff { alpha } => {
                let v2 = alpha * (1.0 - (x[0] - x[1]).cos());
                out[0] = v2 + (1.0 - alpha) * (1.0 - x[1].cos());
                out[1] = v2;
            }
            FlowSystem::Lorenz63 { sigma, rho, beta } => {
                out[0] = sigma * (x[1] - x[0]);
                out[1] = x[0] * (rho - x[2]) - x[1];
                out[2] = x[0] * x[1] - beta * x[2];
            }
        }
    }

    /// Generating vector field at state `x`.
    ///
    /// Errors with a validation error if `x` has the wrong dimension or
    /// contains non-finite entries.
    pub fn vector_field(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let mut out = vec![0.0; self.state_dim()];
        self.vector_field_into(x, &mut out);
        Ok(out)
    }

    /// Exact flow map `x -> x + t * (1, alpha) mod tau`, available only for
    /// the rigid rotation whose field is constant.
    pub fn exact_flow(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_state(x)?;
        if !t.is_finite() {
            return Err(Error::Validation(format!("non-finite flow time {t}")));
        }
        match *self {
            FlowSystem::TorusRotation { alpha } => Ok(vec![
                (x[0] + t).rem_euclid(TAU),
                (x[1] + alpha * t).rem_euclid(TAU),
            ]),
            _ => Err(Error::Validation(format!(
                "exact flow map is unavailable for `{}`; integrate numerically",
                self.name()
            ))),
        }
    }

    /// Observation map applied to a state, writing into `out`.
    fn embed_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            FlowSystem::TorusRotation { .. } | FlowSystem::Stepanoff { .. } => {
                let (s0, c0) = x[0].sin_cos();
                let (s1, c1) = x[1].sin_cos();
                out[0] = c0;
                out[1] = s0;
                out[2] = c1;
                out[3] = s1;
            }
            FlowSystem::Lorenz63 { .. } => out[..3].copy_from_slice(&x[..3]),
        }
    }

    /// Observation map: flat embedding `(cos x1, sin x1, cos x2, sin x2)`
    /// for the torus systems, identity for Lorenz 63.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let mut out = vec![0.0; self.data_dim()];
        self.embed_into(x, &mut out);
        Ok(out)
    }

    /// Pushforward of the vector field under the observation map, i.e. the
    /// velocity of the embedded trajectory at state `x`. This is the data
    /// known to the generator-matrix assembly.
    pub fn pushforward_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let mut v = [0.0; MAX_DIM];
        self.vector_field_into(x, &mut v[..self.state_dim()]);
        match self {
            FlowSystem::TorusRotation { .. } | FlowSystem::Stepanoff { .. } => {
                let (s0, c0) = x[0].sin_cos();
                let (s1, c1) = x[1].sin_cos();
                Ok(vec![-s0 * v[0], c0 * v[0], -s1 * v[1], c1 * v[1]])
            }
            FlowSystem::Lorenz63 { .. } => Ok(v[..3].to_vec()),
        }
    }

    /// Wrap a state onto the fundamental domain, if the system is periodic.
    fn wrap_into(&self, x: &mut [f64]) {
        if self.is_periodic() {
            for xi in x.iter_mut() {
                *xi = xi.rem_euclid(TAU);
            }
        }
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::Validation(format!(
                "state dimension {} does not match `{}` (expected {})",
                x.len(),
                self.name(),
                self.state_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite state {x:?} for `{}`",
                self.name()
            )));
        }
        Ok(())
    }
}

/// One classical Runge-Kutta step of size `h` starting from `x`.
fn rk4_step(system: &FlowSystem, x: &mut [f64], h: f64) {
    let dim = system.state_dim();
    let mut k1 = [0.0; MAX_DIM];
    let mut k2 = [0.0; MAX_DIM];
    let mut k3 = [0.0; MAX_DIM];
    let mut k4 = [0.0; MAX_DIM];
    let mut stage = [0.0; MAX_DIM];

    system.vector_field_into(x, &mut k1[..dim]);
    for i in 0..dim {
        stage[i] = x[i] + 0.5 * h * k1[i];
    }
    system.vector_field_into(&stage[..dim], &mut k2[..dim]);
    for i in 0..dim {
        stage[i] = x[i] + 0.5 * h * k2[i];
    }
    system.vector_field_into(&stage[..dim], &mut k3[..dim]);
    for i in 0..dim {
        stage[i] = x[i] + h * k3[i];
    }
    system.vector_field_into(&stage[..dim], &mut k4[..dim]);
    for i in 0..dim {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrate `n_steps` fixed Runge-Kutta steps of size `dt_step` from `x0`.
///
/// `bound`, when given, is a bounding-box half-width: the integration aborts
/// with a divergence error as soon as any coordinate exceeds it in absolute
/// value (or becomes non-finite). Periodic systems are wrapped onto the
/// fundamental domain after every step.
pub fn integrate_rk4(
    system: &FlowSystem,
    x0: &[f64],
    dt_step: f64,
    n_steps: usize,
    bound: Option<f64>,
) -> Result<Vec<f64>> {
    system.check_state(x0)?;
    if !dt_step.is_finite() {
        return Err(Error::Validation(format!("non-finite step size {dt_step}")));
    }
    let dim = system.state_dim();
    let mut x = [0.0; MAX_DIM];
    x[..dim].copy_from_slice(x0);
    for step in 0..n_steps {
        rk4_step(system, &mut x[..dim], dt_step);
        system.wrap_into(&mut x[..dim]);
        let escaped = x[..dim]
            .iter()
            .any(|v| !v.is_finite() || bound.is_some_and(|b| v.abs() > b));
        if escaped {
            return Err(Error::Divergence(format!(
                "`{}` left the bounding box (|x| <= {}) at step {} of {}: {:?}",
                system.name(),
                bound.map_or(f64::INFINITY, |b| b),
                step + 1,
                n_steps,
                &x[..dim]
            )));
        }
    }
    Ok(x[..dim].to_vec())
}

/// A uniformly sampled trajectory together with its embedded observations.
///
/// Points are stored row-major: sample `i` occupies `states[i*state_dim..]`
/// and `embedded[i*data_dim..]`, so each point is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    state_dim: usize,
    data_dim: usize,
    /// Sampling interval between consecutive rows.
    pub dt: f64,
    /// Number of leading samples that were integrated and discarded.
    pub spinup_discarded: usize,
    states: Vec<f64>,
    embedded: Vec<f64>,
}

impl TrajectoryDataset {
    /// Assemble a dataset from raw row-major buffers, checking dimensions.
    pub fn from_parts(
        state_dim: usize,
        data_dim: usize,
        dt: f64,
        spinup_discarded: usize,
        states: Vec<f64>,
        embedded: Vec<f64>,
    ) -> Result<Self> {
        if state_dim == 0 || data_dim == 0 {
            return Err(Error::Validation("zero dataset dimension".into()));
        }
        if states.len() % state_dim != 0 || embedded.len() % data_dim != 0 {
            return Err(Error::Validation(
                "dataset buffer length is not a multiple of its dimension".into(),
            ));
        }
        let n = states.len() / state_dim;
        if embedded.len() / data_dim != n {
            return Err(Error::Validation(format!(
                "state rows ({n}) and embedded rows ({}) disagree",
                embedded.len() / data_dim
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Validation(format!("sampling interval {dt} must be positive")));
        }
        Ok(Self {
            state_dim,
            data_dim,
            dt,
            spinup_discarded,
            states,
            embedded,
        })
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.states.len() / self.state_dim
    }

    /// State-space dimension.
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Observation-space dimension.
    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    /// State of sample `i`.
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    /// Embedded observation of sample `i`.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.embedded[i * self.data_dim..(i + 1) * self.data_dim]
    }

    /// All states, row-major.
    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// All embedded observations, row-major.
    pub fn points(&self) -> &[f64] {
        &self.embedded
    }

    /// Sampling time of row `i` (the first retained sample sits at `t = 0`).
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }
}

/// Integrate a sampled trajectory of `n` points spaced `dt` apart.
///
/// The first `spinup` samples after `x0` are integrated and discarded so the
/// retained data starts near the attractor. Each sampling interval is split
/// into `substeps` internal Runge-Kutta steps; the rigid rotation instead
/// uses its exact flow map (for which fixed-step integration is exact
/// anyway). Fails with a divergence error if the trajectory leaves the
/// system's default bounding box.
pub fn generate_dataset(
    system: &FlowSystem,
    x0: &[f64],
    n: usize,
    dt: f64,
    spinup: usize,
    substeps: usize,
) -> Result<TrajectoryDataset> {
    system.check_state(x0)?;
    if n == 0 {
        return Err(Error::Validation("requested an empty dataset".into()));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Validation(format!("sampling interval {dt} must be positive")));
    }
    if substeps == 0 {
        return Err(Error::Validation("substeps must be at least 1".into()));
    }
    let (sdim, ddim) = (system.state_dim(), system.data_dim());
    let bound = system.default_bound();
    let h = dt / substeps as f64;

    let mut states = Vec::with_capacity(n * sdim);
    let mut embedded = Vec::with_capacity(n * ddim);
    let mut x = x0.to_vec();
    if spinup > 0 {
        x = integrate_rk4(system, &x, h, spinup * substeps, bound)?;
    }
    let mut emb = vec![0.0; ddim];
    for i in 0..n {
        if i > 0 {
            x = integrate_rk4(system, &x, h, substeps, bound)?;
        }
        states.extend_from_slice(&x);
        system.embed_into(&x, &mut emb);
        embedded.extend_from_slice(&emb);
    }
    TrajectoryDataset::from_parts(sdim, ddim, dt, spinup, states, embedded)
}

/// Draw an initial condition from the system's sampling region: uniform on
/// the torus for the periodic flows, uniform on `[-5,5]^2 x [20,30]` for
/// Lorenz 63 (a box the attractor basin absorbs quickly).
pub fn sample_initial_state<R: Rng>(system: &FlowSystem, rng: &mut R) -> Vec<f64> {
    match system {
        FlowSystem::TorusRotation { .. } | FlowSystem::Stepanoff { .. } => {
            vec![rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)]
        }
        FlowSystem::Lorenz63 { .. } => vec![
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(20.0..30.0),
        ],
    }
}
