//! Staged pipeline orchestration with content-addressed caching.
//!
//! A run is six stages — simulate, tune, basis, eigs, evaluate, autocorr —
//! each reading the previous stages' artifacts and writing its own into
//! one output directory. Every stage records a *cache key*: a hash of its
//! configuration slice, the crate version, and the content hashes of all
//! upstream artifacts. A stage is skipped when its recorded key matches
//! and every one of its artifact files still hashes to the recorded
//! value, so edits to any input — config keys, upstream data, even a
//! hand-edited CSV — transparently invalidate exactly the affected
//! suffix of the pipeline.
//!
//! Stages run sequentially (parallelism lives inside the numerics); a
//! lock file keeps concurrent runs out of the same directory; a failed
//! stage leaves its partial artifacts plus a `FAILED` marker naming the
//! stage, and the next successful run clears the marker.

use crate::basis::{compute_basis, markov_row_sum_residual, normalize_bistochastic, KernelBasis};
use crate::config::PipelineConfig;
use crate::dynamics::{
    generate_dataset, sample_initial_state, FlowSystem, TrajectoryDataset,
};
use crate::error::{Error, Result};
use crate::generator::{assemble_generator_full, finalize_solution, solve_gevp, GeneratorProblem};
use crate::io::{self, BasisMeta, DatasetMeta, EigsMeta};
use crate::kernels::{kernel_matrix, BandwidthModel, TuningOptions};
use crate::nystrom::{autocorrelation, EigenTimeSeries, Evaluator};
use faer::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Resolved-config snapshot written at the start of every run.
pub const CONFIG_SNAPSHOT: &str = "config.toml";

/// The six pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Integrate the training and test trajectories.
    Simulate,
    /// Fit the variable-bandwidth kernel.
    Tune,
    /// Diagonalize the bistochastic Markov operator.
    Basis,
    /// Assemble the generator and solve the eigenvalue problem.
    Eigs,
    /// Evaluate eigenfunctions on the training and test trajectories.
    Evaluate,
    /// Autocorrelate the evaluated eigenfunctions.
    Autocorr,
}

impl Stage {
    /// All stages in execution order.
    pub const ALL: [Stage; 6] = [
        Stage::Simulate,
        Stage::Tune,
        Stage::Basis,
        Stage::Eigs,
        Stage::Evaluate,
        Stage::Autocorr,
    ];

    /// Stage name; also the CLI subcommand that runs it.
    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Tune => "tune",
            Stage::Basis => "basis",
            Stage::Eigs => "eigs",
            Stage::Evaluate => "evaluate",
            Stage::Autocorr => "autocorr",
        }
    }

    /// Stages whose artifacts this stage consumes (transitively complete).
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Simulate => &[],
            Stage::Tune => &[Stage::Simulate],
            Stage::Basis => &[Stage::Simulate, Stage::Tune],
            Stage::Eigs => &[Stage::Simulate, Stage::Tune, Stage::Basis],
            Stage::Evaluate => &[Stage::Simulate, Stage::Tune, Stage::Basis, Stage::Eigs],
            Stage::Autocorr => &[
                Stage::Simulate,
                Stage::Tune,
                Stage::Basis,
                Stage::Eigs,
                Stage::Evaluate,
            ],
        }
    }

    /// Files this stage writes under the given configuration.
    pub fn artifacts(self, cfg: &PipelineConfig) -> Vec<&'static str> {
        match self {
            Stage::Simulate => vec![
                io::DATASET_CSV,
                io::DATASET_META,
                io::TEST_DATASET_CSV,
                io::TEST_DATASET_META,
            ],
            Stage::Tune => vec![
                io::BANDWIDTH_META,
                io::BANDWIDTH_CURVE_CSV,
                io::PILOT_CURVE_CSV,
                io::RHO_CSV,
            ],
            Stage::Basis => vec![
                io::BASIS_META,
                io::BASIS_D_CSV,
                io::BASIS_Q_CSV,
                io::BASIS_LAMBDA_CSV,
                io::BASIS_PHI_CSV,
                io::BASIS_GAMMA_CSV,
            ],
            Stage::Eigs => {
                let mut v = vec![io::EIGS_CSV, io::EIGS_META, io::DCOEF_CSV];
                if cfg.dump_matrices {
                    v.extend([
                        io::V_MATRIX_CSV,
                        io::A_MATRIX_CSV,
                        io::B_MATRIX_CSV,
                        io::CCOEF_CSV,
                    ]);
                }
                v
            }
            Stage::Evaluate => vec![io::ZETA_TRAIN_CSV, io::ZETA_TEST_CSV],
            Stage::Autocorr => vec![io::AUTOCORR_CSV],
        }
    }

    fn state_file(self) -> String {
        format!("state_{}.json", self.name())
    }

    /// The configuration slice that parameterizes this stage's outputs.
    fn config_slice(self, cfg: &PipelineConfig) -> String {
        match self {
            Stage::Simulate => format!(
                "system={};alpha={};sigma={};rho={};beta={};n={};dt={};spinup={};\
                 substeps={};seed={};test_n={};test_dt={};test_seed={}",
                cfg.system,
                cfg.alpha,
                cfg.sigma,
                cfg.rho,
                cfg.beta,
                cfg.n,
                cfg.dt,
                cfg.spinup,
                cfg.substeps,
                cfg.seed,
                cfg.test_n,
                cfg.test_dt,
                cfg.test_seed
            ),
            Stage::Tune => format!(
                "grid_points={};pilot_exponent={};pilot_epsilon={}",
                cfg.grid_points, cfg.pilot_exponent, cfg.pilot_epsilon
            ),
            Stage::Basis => format!("l={}", cfg.l),
            Stage::Eigs => format!(
                "z={};tau={};dump_matrices={}",
                cfg.z, cfg.tau, cfg.dump_matrices
            ),
            Stage::Evaluate => format!("export_modes={:?}", cfg.export_modes),
            Stage::Autocorr => format!("max_lag={}", cfg.max_lag),
        }
    }
}

/// Cache state of a stage, as seen by [`Pipeline::plan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    /// Artifacts exist and match the current key — would be skipped.
    Cached,
    /// Artifacts exist but are out of date — would be recomputed.
    Stale,
    /// No recorded state — would be computed.
    Missing,
    /// An upstream stage has no artifacts, so the key cannot be formed.
    Blocked,
}

impl PlanStatus {
    /// Lowercase label for display.
    pub fn label(self) -> &'static str {
        match self {
            PlanStatus::Cached => "cached",
            PlanStatus::Stale => "stale",
            PlanStatus::Missing => "missing",
            PlanStatus::Blocked => "blocked",
        }
    }
}

/// One row of a dry-run plan.
#[derive(Debug, Clone)]
pub struct PlanEntry {
    /// The stage this row describes.
    pub stage: Stage,
    /// Whether the stage would be skipped, recomputed, or computed fresh.
    pub status: PlanStatus,
    /// The stage's cache key, when computable.
    pub key: Option<String>,
}

/// Per-stage outcome recorded in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    /// Stage name.
    pub stage: String,
    /// `computed` or `cached`.
    pub outcome: String,
    /// Wall-clock seconds spent (0 for cache hits).
    pub seconds: f64,
    /// The cache key the stage ran (or validated) under.
    pub key: String,
}

/// Complete record of a run: configuration, stage outcomes, artifact
/// hashes, and accumulated warnings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// The resolved configuration the run executed.
    pub config: PipelineConfig,
    /// Stage-by-stage outcomes in execution order.
    pub stages: Vec<StageReport>,
    /// SHA-256 of every file in the output directory (the manifest and
    /// transient lock excepted).
    pub artifacts: BTreeMap<String, String>,
    /// Diagnostics worth surfacing: tuning-boundary hits, clamped modes,
    /// large antisymmetry defects.
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StageState {
    key: String,
    artifacts: BTreeMap<String, String>,
}

/// Exclusive-writer guard on the output directory.
#[derive(Debug)]
struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(io::LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = write!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Validation(format!(
                    "output directory `{}` is locked by another run; remove `{}` \
                     if that run is no longer alive",
                    dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Products held in memory while a run executes, loaded lazily from disk
/// when a cached stage's outputs are needed downstream.
#[derive(Default)]
struct Ctx {
    train: Option<TrajectoryDataset>,
    test: Option<TrajectoryDataset>,
    bw: Option<BandwidthModel>,
    kmat: Option<Mat<f64>>,
    basis: Option<KernelBasis>,
    dcoef: Option<Mat<c64>>,
    zeta_test: Option<Vec<EigenTimeSeries>>,
}

fn dependency(stage: Stage, what: &str, err: &Error) -> Error {
    Error::Dependency(format!(
        "{what} is missing or unreadable ({err}); run `koopgen {}` first",
        stage.name()
    ))
}

fn system_params(system: &FlowSystem) -> BTreeMap<String, f64> {
    match *system {
        FlowSystem::TorusRotation { alpha } | FlowSystem::Stepanoff { alpha } => {
            BTreeMap::from([("alpha".to_string(), alpha)])
        }
        FlowSystem::Lorenz63 { sigma, rho, beta } => BTreeMap::from([
            ("sigma".to_string(), sigma),
            ("rho".to_string(), rho),
            ("beta".to_string(), beta),
        ]),
    }
}

/// A configured pipeline bound to an output directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    dir: PathBuf,
}

impl Pipeline {
    /// Validate the configuration and bind it to its output directory.
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = PathBuf::from(&cfg.out_dir);
        Ok(Self { cfg, dir })
    }

    /// The directory artifacts are written to.
    pub fn out_dir(&self) -> &Path {
        &self.dir
    }

    /// The validated configuration.
    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Execute all stages in order, honoring the cache, and write the
    /// manifest. Any stage error is annotated with the stage name; its
    /// partial artifacts stay on disk next to a `FAILED` marker.
    pub fn run(&self) -> Result<RunManifest> {
        fs::create_dir_all(&self.dir)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", self.dir.display()))))?;
        let _lock = LockGuard::acquire(&self.dir)?;
        let _ = fs::remove_file(self.dir.join(io::FAILED_MARKER));
        fs::write(self.dir.join(CONFIG_SNAPSHOT), self.cfg.to_config_string())?;

        let mut ctx = Ctx::default();
        let mut reports = Vec::new();
        let mut warnings = Vec::new();
        for stage in Stage::ALL {
            match self.exec_stage(stage, &mut ctx, &mut warnings) {
                Ok(report) => reports.push(report),
                Err(e) => {
                    let staged = e.in_stage(stage.name());
                    let _ = fs::write(
                        self.dir.join(io::FAILED_MARKER),
                        format!("{staged}\n"),
                    );
                    return Err(staged);
                }
            }
        }
        self.write_manifest(reports, warnings)
    }

    /// Execute one stage against existing upstream artifacts, honoring
    /// the cache, and refresh the manifest. Missing upstream artifacts
    /// produce a dependency error naming the subcommand that builds them.
    pub fn run_stage(&self, stage: Stage) -> Result<RunManifest> {
        fs::create_dir_all(&self.dir)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", self.dir.display()))))?;
        let _lock = LockGuard::acquire(&self.dir)?;
        for up in stage.upstream() {
            let state = self.read_state(*up).ok_or_else(|| {
                Error::Dependency(format!(
                    "stage `{}` has no artifacts in `{}`; run `koopgen {}` first",
                    up.name(),
                    self.dir.display(),
                    up.name()
                ))
            })?;
            for (name, hash) in &state.artifacts {
                let path = self.dir.join(name);
                let ok = path.is_file() && io::sha256_file(&path)? == *hash;
                if !ok {
                    return Err(Error::Dependency(format!(
                        "artifact `{name}` of stage `{}` is missing or modified; \
                         rerun `koopgen {}`",
                        up.name(),
                        up.name()
                    )));
                }
            }
        }
        let _ = fs::remove_file(self.dir.join(io::FAILED_MARKER));
        let mut ctx = Ctx::default();
        let mut warnings = Vec::new();
        let report = match self.exec_stage(stage, &mut ctx, &mut warnings) {
            Ok(report) => report,
            Err(e) => {
                let staged = e.in_stage(stage.name());
                let _ = fs::write(self.dir.join(io::FAILED_MARKER), format!("{staged}\n"));
                return Err(staged);
            }
        };
        self.write_manifest(vec![report], warnings)
    }

    /// Resolve each stage's cache status without executing anything.
    pub fn plan(&self) -> Vec<PlanEntry> {
        let mut entries = Vec::with_capacity(Stage::ALL.len());
        let mut upstream_known = true;
        let mut hashes: BTreeMap<String, String> = BTreeMap::new();
        for stage in Stage::ALL {
            if !upstream_known {
                entries.push(PlanEntry { stage, status: PlanStatus::Blocked, key: None });
                continue;
            }
            let key = self.stage_key(stage, &hashes);
            let state = self.read_state(stage);
            let status = match &state {
                None => PlanStatus::Missing,
                Some(st) if st.key != key => PlanStatus::Stale,
                Some(st) => {
                    if self.artifacts_verify(st) {
                        PlanStatus::Cached
                    } else {
                        PlanStatus::Stale
                    }
                }
            };
            entries.push(PlanEntry { stage, status, key: Some(key) });
            match (status, state) {
                (PlanStatus::Cached, Some(st)) => hashes.extend(st.artifacts),
                _ => upstream_known = false,
            }
        }
        entries
    }

    fn write_manifest(
        &self,
        stages: Vec<StageReport>,
        warnings: Vec<String>,
    ) -> Result<RunManifest> {
        let mut artifacts = BTreeMap::new();
        for path in io::artifact_files(&self.dir)? {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_default();
            artifacts.insert(name, io::sha256_file(&path)?);
        }
        let manifest = RunManifest {
            config: self.cfg.clone(),
            stages,
            artifacts,
            warnings,
        };
        io::write_json(&self.dir.join(io::MANIFEST_JSON), &manifest)?;
        Ok(manifest)
    }

    fn read_state(&self, stage: Stage) -> Option<StageState> {
        io::read_json(&self.dir.join(stage.state_file())).ok()
    }

    fn artifacts_verify(&self, state: &StageState) -> bool {
        state.artifacts.iter().all(|(name, hash)| {
            let path = self.dir.join(name);
            path.is_file() && io::sha256_file(&path).is_ok_and(|h| h == *hash)
        })
    }

    fn stage_key(&self, stage: Stage, upstream: &BTreeMap<String, String>) -> String {
        let mut text = format!(
            "{}|v{}|{}",
            stage.name(),
            env!("CARGO_PKG_VERSION"),
            stage.config_slice(&self.cfg)
        );
        let wanted: Vec<&'static str> = stage
            .upstream()
            .iter()
            .flat_map(|up| up.artifacts(&self.cfg))
            .collect();
        for name in wanted {
            if let Some(hash) = upstream.get(name) {
                text.push_str(&format!("|{name}={hash}"));
            }
        }
        io::sha256_str(&text)
    }

    /// Hashes of all upstream artifacts, read from their state files.
    fn upstream_hashes(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut hashes = BTreeMap::new();
        for up in stage.upstream() {
            let state = self.read_state(*up).ok_or_else(|| {
                Error::Dependency(format!(
                    "stage `{}` has not produced artifacts; run `koopgen {}` first",
                    up.name(),
                    up.name()
                ))
            })?;
            hashes.extend(state.artifacts);
        }
        Ok(hashes)
    }

    fn upstream_artifact_hash(&self, stage: Stage, name: &str) -> Result<String> {
        let state = self.read_state(stage).ok_or_else(|| {
            Error::Dependency(format!(
                "stage `{}` has not produced artifacts; run `koopgen {}` first",
                stage.name(),
                stage.name()
            ))
        })?;
        state.artifacts.get(name).cloned().ok_or_else(|| {
            Error::Dependency(format!(
                "artifact `{name}` is not recorded for stage `{}`; rerun `koopgen {}`",
                stage.name(),
                stage.name()
            ))
        })
    }

    fn exec_stage(
        &self,
        stage: Stage,
        ctx: &mut Ctx,
        warnings: &mut Vec<String>,
    ) -> Result<StageReport> {
        let upstream = self.upstream_hashes(stage)?;
        let key = self.stage_key(stage, &upstream);
        if self.cfg.cache {
            if let Some(state) = self.read_state(stage) {
                if state.key == key && self.artifacts_verify(&state) {
                    return Ok(StageReport {
                        stage: stage.name().to_string(),
                        outcome: "cached".to_string(),
                        seconds: 0.0,
                        key,
                    });
                }
            }
        }
        let t0 = Instant::now();
        self.compute_stage(stage, ctx, warnings)?;
        let seconds = t0.elapsed().as_secs_f64();
        let mut artifacts = BTreeMap::new();
        for name in stage.artifacts(&self.cfg) {
            artifacts.insert(name.to_string(), io::sha256_file(&self.dir.join(name))?);
        }
        io::write_json(
            &self.dir.join(stage.state_file()),
            &StageState { key: key.clone(), artifacts },
        )?;
        Ok(StageReport {
            stage: stage.name().to_string(),
            outcome: "computed".to_string(),
            seconds,
            key,
        })
    }

    // --- lazy loaders -----------------------------------------------------

    fn ensure_train(&self, ctx: &mut Ctx) -> Result<()> {
        if ctx.train.is_none() {
            let (data, _) = io::read_dataset(&self.dir, io::DATASET_CSV, io::DATASET_META)
                .map_err(|e| dependency(Stage::Simulate, "the training dataset", &e))?;
            ctx.train = Some(data);
        }
        Ok(())
    }

    fn ensure_test(&self, ctx: &mut Ctx) -> Result<()> {
        if ctx.test.is_none() {
            let (data, _) =
                io::read_dataset(&self.dir, io::TEST_DATASET_CSV, io::TEST_DATASET_META)
                    .map_err(|e| dependency(Stage::Simulate, "the test dataset", &e))?;
            ctx.test = Some(data);
        }
        Ok(())
    }

    fn ensure_bw(&self, ctx: &mut Ctx) -> Result<()> {
        if ctx.bw.is_none() {
            let (bw, _) = io::read_bandwidth(&self.dir)
                .map_err(|e| dependency(Stage::Tune, "the bandwidth model", &e))?;
            ctx.bw = Some(bw);
        }
        Ok(())
    }

    fn ensure_basis(&self, ctx: &mut Ctx) -> Result<()> {
        if ctx.basis.is_none() {
            let (basis, _) = io::read_basis(&self.dir)
                .map_err(|e| dependency(Stage::Basis, "the kernel basis", &e))?;
            ctx.basis = Some(basis);
        }
        Ok(())
    }

    fn ensure_kmat(&self, ctx: &mut Ctx) -> Result<()> {
        if ctx.kmat.is_none() {
            self.ensure_train(ctx)?;
            self.ensure_bw(ctx)?;
            let train = ctx.train.as_ref().unwrap();
            let bw = ctx.bw.as_ref().unwrap();
            let kmat = kernel_matrix(train.points(), train.data_dim(), bw.epsilon, &bw.rho)?;
            ctx.kmat = Some(kmat);
        }
        Ok(())
    }

    fn ensure_dcoef(&self, ctx: &mut Ctx) -> Result<()> {
        if ctx.dcoef.is_none() {
            let dcoef = io::read_complex_matrix(&self.dir.join(io::DCOEF_CSV))
                .map_err(|e| dependency(Stage::Eigs, "the eigenfunction coefficients", &e))?;
            ctx.dcoef = Some(dcoef);
        }
        Ok(())
    }

    fn ensure_zeta_test(&self, ctx: &mut Ctx) -> Result<()> {
        if ctx.zeta_test.is_none() {
            let (_, series) = io::read_zeta(&self.dir.join(io::ZETA_TEST_CSV))
                .map_err(|e| dependency(Stage::Evaluate, "the evaluated test series", &e))?;
            ctx.zeta_test = Some(series);
        }
        Ok(())
    }

    // --- stage bodies -----------------------------------------------------

    fn compute_stage(
        &self,
        stage: Stage,
        ctx: &mut Ctx,
        warnings: &mut Vec<String>,
    ) -> Result<()> {
        match stage {
            Stage::Simulate => self.stage_simulate(ctx),
            Stage::Tune => self.stage_tune(ctx, warnings),
            Stage::Basis => self.stage_basis(ctx),
            Stage::Eigs => self.stage_eigs(ctx, warnings),
            Stage::Evaluate => self.stage_evaluate(ctx),
            Stage::Autocorr => self.stage_autocorr(ctx),
        }
    }

    fn stage_simulate(&self, ctx: &mut Ctx) -> Result<()> {
        let cfg = &self.cfg;
        let system = cfg.to_flow_system()?;
        let params = system_params(&system);

        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let x0 = sample_initial_state(&system, &mut rng);
        let train = generate_dataset(&system, &x0, cfg.n, cfg.dt, cfg.spinup, cfg.substeps)?;
        let meta = DatasetMeta {
            system: cfg.system.clone(),
            params: params.clone(),
            n: cfg.n,
            dt: cfg.dt,
            spinup: cfg.spinup,
            seed: cfg.seed,
            substeps: cfg.substeps,
            state_dim: system.state_dim(),
            data_dim: system.data_dim(),
        };
        io::write_dataset(&self.dir, io::DATASET_CSV, io::DATASET_META, &train, &meta)?;

        // The test trajectory keeps the training run's integrator step and
        // spin-up *duration*, re-expressed in its own sampling interval.
        let test_substeps =
            ((cfg.substeps as f64 * cfg.test_dt / cfg.dt).ceil() as usize).max(1);
        let test_spinup = (cfg.spinup as f64 * cfg.dt / cfg.test_dt).round() as usize;
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.test_seed);
        let tx0 = sample_initial_state(&system, &mut rng);
        let test =
            generate_dataset(&system, &tx0, cfg.test_n, cfg.test_dt, test_spinup, test_substeps)?;
        let test_meta = DatasetMeta {
            system: cfg.system.clone(),
            params,
            n: cfg.test_n,
            dt: cfg.test_dt,
            spinup: test_spinup,
            seed: cfg.test_seed,
            substeps: test_substeps,
            state_dim: system.state_dim(),
            data_dim: system.data_dim(),
        };
        io::write_dataset(
            &self.dir,
            io::TEST_DATASET_CSV,
            io::TEST_DATASET_META,
            &test,
            &test_meta,
        )?;
        ctx.train = Some(train);
        ctx.test = Some(test);
        Ok(())
    }

    fn stage_tune(&self, ctx: &mut Ctx, warnings: &mut Vec<String>) -> Result<()> {
        let cfg = &self.cfg;
        self.ensure_train(ctx)?;
        let train = ctx.train.as_ref().unwrap();
        let opts = TuningOptions {
            pilot_exponent: cfg.pilot_exponent,
            pilot_epsilon: (cfg.pilot_epsilon > 0.0).then_some(cfg.pilot_epsilon),
            grid_points: cfg.grid_points,
        };
        let bw = BandwidthModel::fit(train.points(), train.data_dim(), &opts)?;
        if bw.pilot_boundary_warning {
            warnings.push(
                "pilot tuning curve peaked at the grid boundary; the pilot scale \
                 may be unreliable"
                    .to_string(),
            );
        }
        if bw.boundary_warning {
            warnings.push(
                "bandwidth tuning curve peaked at the grid boundary; the kernel \
                 scale may be unreliable"
                    .to_string(),
            );
        }
        let dataset_hash = self.upstream_artifact_hash(Stage::Simulate, io::DATASET_CSV)?;
        io::write_bandwidth(&self.dir, &bw, &dataset_hash)?;
        ctx.bw = Some(bw);
        // The kernel matrix depends on the bandwidth; drop any stale one.
        ctx.kmat = None;
        Ok(())
    }

    fn stage_basis(&self, ctx: &mut Ctx) -> Result<()> {
        let cfg = &self.cfg;
        self.ensure_kmat(ctx)?;
        let kmat = ctx.kmat.as_ref().unwrap();
        let bw = ctx.bw.as_ref().unwrap();
        let bi = normalize_bistochastic(kmat.as_ref())?;
        let row_sum_residual = markov_row_sum_residual(bi.khat.as_ref());
        let basis = compute_basis(&bi, cfg.l)?;
        let meta = BasisMeta {
            epsilon: bw.epsilon,
            pilot_epsilon: bw.pilot_epsilon,
            pilot_exponent: bw.pilot_exponent,
            n: basis.n(),
            l_prime: basis.l_prime(),
            row_sum_residual,
            dataset_hash: self.upstream_artifact_hash(Stage::Simulate, io::DATASET_CSV)?,
            bandwidth_hash: self.upstream_artifact_hash(Stage::Tune, io::BANDWIDTH_META)?,
        };
        io::write_basis(&self.dir, &basis, &meta)?;
        ctx.basis = Some(basis);
        Ok(())
    }

    fn stage_eigs(&self, ctx: &mut Ctx, warnings: &mut Vec<String>) -> Result<()> {
        let cfg = &self.cfg;
        self.ensure_kmat(ctx)?;
        self.ensure_basis(ctx)?;
        let train = ctx.train.as_ref().unwrap();
        let bw = ctx.bw.as_ref().unwrap();
        let kmat = ctx.kmat.as_ref().unwrap();
        let basis = ctx.basis.as_ref().unwrap();
        if basis.l() != cfg.l {
            return Err(Error::Dependency(format!(
                "stored basis has l = {} but the configuration wants l = {}; \
                 rerun `koopgen basis`",
                basis.l(),
                cfg.l
            )));
        }
        let system = cfg.to_flow_system()?;
        let vfull = assemble_generator_full(&system, train, basis, bw, kmat.as_ref())?;
        let l = basis.l();
        let v = vfull.submatrix(1, 1, l, l).to_owned();

        // Skew-adjointness holds only in the sampling limit; report how far
        // the raw matrix strays before it is antisymmetrized.
        let mut defect = 0.0f64;
        let mut scale = 0.0f64;
        for j in 0..l {
            for i in 0..l {
                defect = defect.max((v[(i, j)] + v[(j, i)]).abs());
                scale = scale.max(v[(i, j)].abs());
            }
        }
        let antisym_residual = if scale > 0.0 { defect / scale } else { 0.0 };
        if antisym_residual > 0.25 {
            warnings.push(format!(
                "generator antisymmetry defect {antisym_residual:.2e} is large; \
                 the sampling may not resolve the invariant measure"
            ));
        }

        let problem = GeneratorProblem::new(v, &basis.lambda, cfg.tau, cfg.z)?;
        let pairs = solve_gevp(problem.a.as_ref(), problem.b.as_ref())?;
        let sol = finalize_solution(pairs, problem.v.as_ref(), cfg.z, &basis.lambda)?;
        if !sol.clamped_modes.is_empty() {
            warnings.push(format!(
                "{} mode(s) exceeded the resolvent frequency bound 1/(2z) = {} and \
                 were clamped: {:?}",
                sol.clamped_modes.len(),
                1.0 / (2.0 * cfg.z),
                sol.clamped_modes
            ));
        }

        io::write_eigs_table(&self.dir.join(io::EIGS_CSV), &sol.beta, &sol.omega, &sol.energy)?;
        io::write_complex_matrix(&self.dir.join(io::DCOEF_CSV), "d", sol.dcoef.as_ref())?;
        let meta = EigsMeta {
            z: cfg.z,
            tau: cfg.tau,
            l,
            n_modes: sol.n_modes(),
            clamped_modes: sol.clamped_modes.clone(),
            antisym_residual,
            dataset_hash: self.upstream_artifact_hash(Stage::Simulate, io::DATASET_CSV)?,
            basis_hash: self.upstream_artifact_hash(Stage::Basis, io::BASIS_META)?,
        };
        io::write_json(&self.dir.join(io::EIGS_META), &meta)?;
        if cfg.dump_matrices {
            io::write_matrix(&self.dir.join(io::V_MATRIX_CSV), "v", problem.v.as_ref())?;
            io::write_matrix(&self.dir.join(io::A_MATRIX_CSV), "a", problem.a.as_ref())?;
            io::write_matrix(&self.dir.join(io::B_MATRIX_CSV), "b", problem.b.as_ref())?;
            io::write_complex_matrix(&self.dir.join(io::CCOEF_CSV), "c", sol.c.as_ref())?;
        }
        ctx.dcoef = Some(sol.dcoef.clone());
        Ok(())
    }

    fn stage_evaluate(&self, ctx: &mut Ctx) -> Result<()> {
        let cfg = &self.cfg;
        self.ensure_train(ctx)?;
        self.ensure_test(ctx)?;
        self.ensure_bw(ctx)?;
        self.ensure_basis(ctx)?;
        self.ensure_dcoef(ctx)?;
        let train = ctx.train.as_ref().unwrap();
        let test = ctx.test.as_ref().unwrap();
        let bw = ctx.bw.as_ref().unwrap();
        let basis = ctx.basis.as_ref().unwrap();
        let dcoef = ctx.dcoef.as_ref().unwrap();
        for &m in &cfg.export_modes {
            if m >= dcoef.ncols() {
                return Err(Error::Dependency(format!(
                    "export mode {m} is out of range for the stored spectrum \
                     ({} modes); rerun `koopgen eigs`",
                    dcoef.ncols()
                )));
            }
        }
        if dcoef.nrows() != basis.l() {
            return Err(Error::Dependency(format!(
                "stored coefficients have {} rows but the basis has l = {}; \
                 rerun `koopgen eigs`",
                dcoef.nrows(),
                basis.l()
            )));
        }

        // Training values are the in-sample expansion phi[:, 1..] * d —
        // exact where the Nystrom formula is only consistent.
        let n = basis.n();
        let l = basis.l();
        let phi_nc = basis.phi.submatrix(0, 1, n, l);
        let sel = cfg.export_modes.len();
        let dre = Mat::<f64>::from_fn(l, sel, |i, j| dcoef[(i, cfg.export_modes[j])].re);
        let dim_ = Mat::<f64>::from_fn(l, sel, |i, j| dcoef[(i, cfg.export_modes[j])].im);
        let zre = phi_nc * &dre;
        let zim = phi_nc * &dim_;
        let times_train: Vec<f64> = (0..n).map(|m| train.time(m)).collect();
        let series_train: Vec<EigenTimeSeries> = cfg
            .export_modes
            .iter()
            .enumerate()
            .map(|(j, &mode)| EigenTimeSeries {
                mode,
                times: times_train.clone(),
                values: (0..n).map(|m| c64::new(zre[(m, j)], zim[(m, j)])).collect(),
            })
            .collect();
        io::write_zeta(&self.dir.join(io::ZETA_TRAIN_CSV), &times_train, &series_train)?;

        let evaluator = Evaluator::new(train, bw, basis)?;
        let series_test =
            evaluator.eigenfunction_timeseries(test, dcoef.as_ref(), &cfg.export_modes)?;
        let times_test: Vec<f64> = (0..test.n()).map(|m| test.time(m)).collect();
        io::write_zeta(&self.dir.join(io::ZETA_TEST_CSV), &times_test, &series_test)?;
        ctx.zeta_test = Some(series_test);
        Ok(())
    }

    fn stage_autocorr(&self, ctx: &mut Ctx) -> Result<()> {
        let cfg = &self.cfg;
        self.ensure_zeta_test(ctx)?;
        let series = ctx.zeta_test.as_ref().unwrap();
        let rows = cfg.autocorr_rows();
        let mut corr = Vec::with_capacity(series.len());
        for s in series {
            corr.push((s.mode, autocorrelation(&s.values, rows - 1)?));
        }
        io::write_autocorr(&self.dir.join(io::AUTOCORR_CSV), cfg.test_dt, &corr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_order_and_upstreams_are_consistent() {
        // Every stage lists exactly the stages before it.
        for (i, stage) in Stage::ALL.iter().enumerate() {
            assert_eq!(stage.upstream(), &Stage::ALL[..i]);
        }
        let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
        assert_eq!(
            names,
            vec!["simulate", "tune", "basis", "eigs", "evaluate", "autocorr"]
        );
    }

    #[test]
    fn stage_keys_separate_configuration_slices() {
        let cfg = PipelineConfig::default().desk();
        let p = Pipeline::new(cfg.clone()).unwrap();
        let empty = BTreeMap::new();
        let k1 = p.stage_key(Stage::Eigs, &empty);

        let mut cfg2 = cfg.clone();
        cfg2.z = 0.2;
        let p2 = Pipeline::new(cfg2).unwrap();
        assert_ne!(k1, p2.stage_key(Stage::Eigs, &empty));

        // Changing z must not touch the basis key.
        let mut cfg3 = cfg.clone();
        cfg3.z = 0.2;
        let p3 = Pipeline::new(cfg3).unwrap();
        assert_eq!(
            p.stage_key(Stage::Basis, &empty),
            p3.stage_key(Stage::Basis, &empty)
        );

        // Upstream hashes feed the key.
        let mut up = BTreeMap::new();
        up.insert(io::DATASET_CSV.to_string(), "abc".to_string());
        assert_ne!(p.stage_key(Stage::Tune, &empty), p.stage_key(Stage::Tune, &up));
    }

    #[test]
    fn plan_on_empty_directory_is_missing_then_blocked() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default().desk();
        cfg.out_dir = tmp.path().join("run").to_string_lossy().to_string();
        let p = Pipeline::new(cfg).unwrap();
        let plan = p.plan();
        assert_eq!(plan.len(), 6);
        assert_eq!(plan[0].status, PlanStatus::Missing);
        assert!(plan[0].key.is_some());
        for entry in &plan[1..] {
            assert_eq!(entry.status, PlanStatus::Blocked);
            assert!(entry.key.is_none());
        }
    }

    #[test]
    fn lock_excludes_concurrent_runs() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        fs::create_dir_all(&dir).unwrap();
        let guard = LockGuard::acquire(&dir).unwrap();
        let err = LockGuard::acquire(&dir).unwrap_err();
        assert!(err.to_string().contains("locked"));
        drop(guard);
        // Releasing the guard removes the lock file.
        assert!(LockGuard::acquire(&dir).is_ok());
    }

    #[test]
    fn single_stage_without_upstream_is_a_dependency_error() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default().desk();
        cfg.out_dir = tmp.path().join("run").to_string_lossy().to_string();
        let p = Pipeline::new(cfg).unwrap();
        let err = p.run_stage(Stage::Eigs).unwrap_err();
        assert!(matches!(err, Error::Dependency(_)));
        assert!(err.to_string().contains("simulate"), "{err}");
    }
}
