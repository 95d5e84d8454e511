//! Config-driven runner for the cat-transfer experiments: optimization,
//! closed and open replay, the `(lambda, gamma)` robustness sweep and Wigner
//! snapshots. The `catchain` binary is a thin wrapper around [`run_optimize`],
//! [`run_propagate`], [`run_sweep`] and [`run_wigner`].

pub mod config;
mod experiment;
mod run;
pub mod sweep;

pub use config::ExperimentConfig;
pub use experiment::{ClosedRun, Experiment, OpenRun};
pub use run::{run_optimize, run_propagate, run_sweep, run_wigner, RunDiagnostics, RunSummary, WignerSource};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    /// Bad arguments or input files that do not match the configuration.
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] catchain::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 3 for numerical invariant failures, 4 for configuration and input
    /// errors, 1 otherwise. Non-convergence (2) is not an error.
    pub fn exit_code(&self) -> i32 {
        use catchain::Error as E;
        match self {
            CliError::Config(_) | CliError::Input(_) => 4,
            CliError::Core(E::InvariantViolation { .. } | E::Divergence { .. } | E::NonFinite(_) | E::NegativeEigenvalue { .. }) => 3,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
