use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("correlation undefined: zero variance in {0}")]
    UndefinedCorrelation(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty retained eigenvalue set")]
    EmptySpectrum,

    #[error("retained eigenvalue {value} at index {index} is not positive")]
    NonPositiveEigenvalue { index: usize, value: f64 },

    #[error("parameter count {n} exceeds Hessian cap {cap}")]
    HessianCap { n: usize, cap: usize },

    #[error("training has not converged (residual {residual:e} >= {tolerance:e})")]
    Unconverged { residual: f64, tolerance: f64 },

    #[error("truncated record at byte offset {offset}")]
    Truncated { offset: u64 },

    #[error("invalid label byte {label} at byte offset {offset}")]
    InvalidLabel { label: u8, offset: u64 },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
