use thiserror::Error;

/// Errors raised by the numerical and analytic routines of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shell {shell} lies outside the support of the shell distribution")]
    OutsideSupport { shell: i64 },

    #[error("basis/mode mismatch: {0}")]
    BasisMismatch(String),

    #[error("basis dimension {dim} exceeds limit {limit}")]
    DimensionLimit { dim: usize, limit: usize },

    #[error("empty basis: {0}")]
    EmptyBasis(String),

    #[error("small denominator {value:e} in {context}; two-level reduction is invalid here")]
    SmallDenominator { value: f64, context: String },

    #[error("eigensolver did not converge (worst residual {residual:e})")]
    NoConvergence { residual: f64 },

    #[error("scan window too narrow around q = {q}: need half-width {needed}, have {have}")]
    WindowTooNarrow { q: i32, needed: f64, have: f64 },

    #[error("ambiguous branch identification at q = {q} (overlap {overlap:.3} < 0.5)")]
    AmbiguousBranch { q: i32, overlap: f64 },

    #[error("truncation too tight: renormalization deficit {deficit:e}")]
    TruncationTooTight { deficit: f64 },

    #[error("propagator step failure: achieved local error {achieved:e}")]
    StepFailure { achieved: f64 },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag, used in the CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::OutsideSupport { .. } => "outside_support",
            Error::BasisMismatch(_) => "basis_mismatch",
            Error::DimensionLimit { .. } => "dimension_limit",
            Error::EmptyBasis(_) => "empty_basis",
            Error::SmallDenominator { .. } => "small_denominator",
            Error::NoConvergence { .. } => "no_convergence",
            Error::WindowTooNarrow { .. } => "window_too_narrow",
            Error::AmbiguousBranch { .. } => "ambiguous_branch",
            Error::TruncationTooTight { .. } => "truncation_too_tight",
            Error::StepFailure { .. } => "step_failure",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::Io(_) => "io",
        }
    }

    /// True for errors caused by bad user input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_) | Error::BasisMismatch(_) | Error::DimensionLimit { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
