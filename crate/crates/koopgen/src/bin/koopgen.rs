//! Command-line front end over [`koopgen::pipeline::Pipeline`].
//!
//! `koopgen run` executes the whole pipeline; each stage is also a
//! subcommand that runs alone against previously cached artifacts. All
//! subcommands accept the same flags: a config file, the `--desk`
//! preset, and per-key overrides applied in that order.

use clap::{Args, Parser, Subcommand};
use koopgen::config::PipelineConfig;
use koopgen::pipeline::{Pipeline, RunManifest, Stage};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "koopgen",
    version,
    about = "Data-driven spectral analysis of ergodic flows",
    after_help = "Parallelism is controlled by the RAYON_NUM_THREADS environment \
                  variable; outputs are byte-identical for any thread count. \
                  Exit codes: 0 success, 2 invalid input, 3 numerical failure, \
                  4 missing upstream artifacts."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage in order, reusing cached artifacts.
    Run(CommonArgs),
    /// Integrate the training and test trajectories.
    Simulate(CommonArgs),
    /// Fit the variable-bandwidth kernel.
    Tune(CommonArgs),
    /// Diagonalize the bistochastic Markov operator.
    Basis(CommonArgs),
    /// Assemble the generator and solve for its spectrum.
    Eigs(CommonArgs),
    /// Evaluate eigenfunctions on the training and test trajectories.
    Evaluate(CommonArgs),
    /// Autocorrelate the evaluated eigenfunctions.
    Autocorr(CommonArgs),
}

impl Command {
    fn split(&self) -> (&CommonArgs, Option<Stage>) {
        match self {
            Command::Run(a) => (a, None),
            Command::Simulate(a) => (a, Some(Stage::Simulate)),
            Command::Tune(a) => (a, Some(Stage::Tune)),
            Command::Basis(a) => (a, Some(Stage::Basis)),
            Command::Eigs(a) => (a, Some(Stage::Eigs)),
            Command::Evaluate(a) => (a, Some(Stage::Evaluate)),
            Command::Autocorr(a) => (a, Some(Stage::Autocorr)),
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (TOML); defaults for any key it omits
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Desk-scale preset: n=5000, l=50, test_n=1000, max_lag=10
    #[arg(long)]
    desk: bool,

    /// Print the resolved plan and cache state without computing
    #[arg(long)]
    dry_run: bool,

    /// Output directory (overrides `out_dir`)
    #[arg(long, value_name = "DIR")]
    out: Option<String>,

    /// Recompute every stage, ignoring cached artifacts
    #[arg(long)]
    no_cache: bool,

    /// Also export the generator and eigenproblem matrices as CSV
    #[arg(long)]
    dump_matrices: bool,

    /// Dynamical system: torus_rotation, stepanoff, or lorenz63.
    /// Without --config this selects the system's full-scale preset.
    #[arg(long, value_name = "NAME")]
    system: Option<String>,

    /// Training samples
    #[arg(long = "N", value_name = "COUNT")]
    n: Option<usize>,

    /// Sampling interval (time units)
    #[arg(long, value_name = "TIME")]
    dt: Option<f64>,

    /// Samples discarded before recording begins
    #[arg(long, value_name = "COUNT")]
    spinup: Option<usize>,

    /// Integrator steps per sampling interval
    #[arg(long, value_name = "COUNT")]
    substeps: Option<usize>,

    /// Training trajectory seed
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,

    /// Retained nonconstant basis functions (must be even)
    #[arg(long, value_name = "COUNT")]
    l: Option<usize>,

    /// Resolvent parameter (> 0)
    #[arg(long, value_name = "Z")]
    z: Option<f64>,

    /// Spectral smoothing time (>= 0)
    #[arg(long, value_name = "TIME")]
    tau: Option<f64>,

    /// Test samples
    #[arg(long, value_name = "COUNT")]
    test_n: Option<usize>,

    /// Test sampling interval (time units)
    #[arg(long, value_name = "TIME")]
    test_dt: Option<f64>,

    /// Test trajectory seed
    #[arg(long, value_name = "SEED")]
    test_seed: Option<u64>,

    /// Eigenfunction index to export (repeatable)
    #[arg(long = "j", value_name = "INDEX")]
    j: Vec<usize>,

    /// Longest autocorrelation lag (time units)
    #[arg(long, value_name = "TIME")]
    max_lag: Option<f64>,
}

impl CommonArgs {
    /// Defaults (or the system preset), then the config file, then flags.
    fn resolve(&self) -> koopgen::Result<PipelineConfig> {
        let mut cfg = match (&self.config, &self.system) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    koopgen::Error::Io(std::io::Error::new(
                        e.kind(),
                        format!("{}: {e}", path.display()),
                    ))
                })?;
                PipelineConfig::from_toml_str(&text)?
            }
            (None, Some(name)) => PipelineConfig::for_system(name)?,
            (None, None) => PipelineConfig::default(),
        };
        if let Some(name) = &self.system {
            cfg.system = name.clone();
        }
        if self.desk {
            cfg = cfg.desk();
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.spinup {
            cfg.spinup = v;
        }
        if let Some(v) = self.substeps {
            cfg.substeps = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.l {
            cfg.l = v;
        }
        if let Some(v) = self.z {
            cfg.z = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.test_n {
            cfg.test_n = v;
        }
        if let Some(v) = self.test_dt {
            cfg.test_dt = v;
        }
        if let Some(v) = self.test_seed {
            cfg.test_seed = v;
        }
        if !self.j.is_empty() {
            cfg.export_modes = self.j.clone();
        }
        if let Some(v) = self.max_lag {
            cfg.max_lag = v;
        }
        if let Some(dir) = &self.out {
            cfg.out_dir = dir.clone();
        }
        if self.no_cache {
            cfg.cache = false;
        }
        if self.dump_matrices {
            cfg.dump_matrices = true;
        }
        Ok(cfg)
    }
}

fn print_plan(pipeline: &Pipeline) {
    println!(
        "plan for `{}` ({}):",
        pipeline.out_dir().display(),
        pipeline.config().system
    );
    for entry in pipeline.plan() {
        let key = entry
            .key
            .as_deref()
            .map(|k| &k[..12.min(k.len())])
            .unwrap_or("-");
        println!("  {:<9} {:<8} key {}", entry.stage.name(), entry.status.label(), key);
    }
}

fn print_report(pipeline: &Pipeline, manifest: &RunManifest) {
    for report in &manifest.stages {
        if report.outcome == "cached" {
            println!("  {:<9} cached", report.stage);
        } else {
            println!("  {:<9} computed in {:.2}s", report.stage, report.seconds);
        }
    }
    for warning in &manifest.warnings {
        eprintln!("warning: {warning}");
    }
    println!(
        "{} artifact(s) in `{}`",
        manifest.artifacts.len(),
        pipeline.out_dir().display()
    );
}

fn run(cli: &Cli) -> koopgen::Result<()> {
    let (args, stage) = cli.command.split();
    let pipeline = Pipeline::new(args.resolve()?)?;
    if args.dry_run {
        print_plan(&pipeline);
        return Ok(());
    }
    let manifest = match stage {
        None => pipeline.run()?,
        Some(stage) => pipeline.run_stage(stage)?,
    };
    print_report(&pipeline, &manifest);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
