//! Error type shared across the crate.
//!
//! Errors fall into three broad categories that map onto process exit codes
//! for the command-line frontend:
//!
//! * **validation** (exit code 2): malformed configuration, inconsistent
//!   dimensions, out-of-range arguments, locked output directories;
//! * **numerical** (exit code 3): diverging trajectories, degenerate data,
//!   rank-deficient kernel matrices, failed factorizations;
//! * **dependency** (exit code 4): a pipeline stage was asked to run before
//!   the artifacts it consumes exist on disk.

use thiserror::Error;

/// Convenient alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments, malformed configuration, or inconsistent dimensions.
    #[error("validation: {0}")]
    Validation(String),

    /// A trajectory left the configured bounding box during integration.
    #[error("trajectory diverged: {0}")]
    Divergence(String),

    /// The data cannot support the requested computation (coincident
    /// samples, zero observables, and similar degeneracies).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// The kernel spectrum has fewer usable eigenvalues than requested.
    #[error(
        "insufficient rank: requested {requested} basis functions but only \
         {max_usable} eigenvalues exceed the rank threshold; lower the basis \
         size or increase the sample count"
    )]
    InsufficientRank {
        /// Number of basis functions the caller asked for.
        requested: usize,
        /// Largest basis size supported by the spectrum.
        max_usable: usize,
    },

    /// A matrix expected to be positive definite failed its factorization.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// Any other numerical failure (non-finite values, failed eigensolve).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A pipeline stage is missing the artifacts produced by an upstream
    /// stage; the message names the command that produces them.
    #[error("missing dependency: {0}")]
    Dependency(String),

    /// Filesystem failure while reading or writing artifacts.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// CSV encode/decode failure while reading or writing artifacts.
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    /// JSON encode/decode failure for sidecar metadata.
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// TOML configuration parse failure.
    #[error("config parse: {0}")]
    ConfigParse(#[from] toml::de::Error),

    /// Wraps an error with the pipeline stage it occurred in.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        /// Name of the pipeline stage (matches the subcommand name).
        stage: &'static str,
        /// Underlying failure.
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attach a pipeline stage name to an error.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code for the command-line frontend: 2 for validation
    /// errors, 3 for numerical failures, 4 for missing stage dependencies.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::ConfigParse(_) => 2,
            Error::Divergence(_)
            | Error::DegenerateData(_)
            | Error::InsufficientRank { .. }
            | Error::NotPositiveDefinite(_)
            | Error::Numerical(_) => 3,
            Error::Dependency(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
