use thiserror::Error;

/// Errors raised by the library.
///
/// The variants are coarse on purpose: callers (the CLI in particular) map
/// them onto a small set of exit statuses.
#[derive(Debug, Error)]
pub enum Error {
    /// Two objects that must live on the same grid, boundary or time axis do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A configuration value is out of range (CFL, tolerances, sizes, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An operation was called outside its contract (unsupported variant,
    /// source outside the observed set, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A normalisation constant vanished (e.g. `∫ λ dS = 0`).
    #[error("degenerate normalization: {0}")]
    Degenerate(String),

    /// An iterative method produced a non-finite or otherwise broken iterate.
    #[error("numerical divergence: {0}")]
    Divergence(String),

    /// A file did not match the expected format.
    #[error("format error: {0}")]
    Format(String),

    /// A generator specification is invalid for the target grid.
    #[error("invalid specification: {0}")]
    Spec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by a numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Divergence(_))
    }
}
