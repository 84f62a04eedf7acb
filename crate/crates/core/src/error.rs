use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// Root-MUSIC found fewer admissible roots than requested.
    #[error("degenerate spectrum: requested {requested} sources, found {found}")]
    DegenerateSpectrum { requested: usize, found: usize },

    /// The difference coarray has no usable contiguous segment.
    #[error("degenerate coarray: contiguous lag segment has length {0}")]
    DegenerateCoarray(usize),

    /// Fisher information is singular or too ill-conditioned to invert.
    #[error("degenerate bound: Fisher information condition number {condition:.3e}")]
    DegenerateBound { condition: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
