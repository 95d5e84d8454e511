use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Hilbert space too large: cutoff {cutoff}^{n_modes} = {dim} exceeds the budget of {budget}")]
    DimensionBudget {
        n_modes: usize,
        cutoff: usize,
        dim: u128,
        budget: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mode index {mode} out of range for a {n_modes}-mode space")]
    ModeOutOfRange { mode: usize, n_modes: usize },
    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("operands live on different Fock spaces")]
    SpaceMismatch,
    #[error("operator is not tagged Hermitian (residue {residue:e})")]
    NonHermitian { residue: f64 },
    #[error("degenerate start: overlap with the target is {overlap:e}, the costate vanishes")]
    DegenerateStart { overlap: f64 },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("{what} diverged at t = {t}: magnitude {magnitude:e} exceeds guard {guard:e}")]
    Divergence {
        what: &'static str,
        t: f64,
        magnitude: f64,
        guard: f64,
    },
    #[error("invariant violated at t = {t}: {what} = {value:e} exceeds tolerance {tolerance:e}")]
    InvariantViolation {
        what: &'static str,
        t: f64,
        value: f64,
        tolerance: f64,
    },
    #[error("negative eigenvalue {value:e} below the clipping threshold")]
    NegativeEigenvalue { value: f64 },
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    #[error("Wigner grid too small: boundary |W| = {boundary:e} vs peak {peak:e}")]
    GridTooSmall { boundary: f64, peak: f64 },
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
