use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{context}: need at least {needed} samples, got {got}")]
    TooFewSamples {
        context: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate bandwidth: all sample rows are identical (median squared distance is 0)")]
    DegenerateBandwidth,

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel mismatch: {0}")]
    KernelMismatch(String),

    #[error("negative V-statistic {value:e} in {context} exceeds rounding slack")]
    NegativeStatistic { context: &'static str, value: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("zero variance in column {column} of {context}")]
    ZeroVariance { context: &'static str, column: usize },

    #[error("empty label class {0}")]
    EmptyClass(i64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    /// Bad configuration or invalid arguments.
    Usage,
    /// Malformed or inconsistent input data.
    Data,
    /// A numerical failure: non-finite values, non-PD matrices, divergence.
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidKernel(_) | Error::KernelMismatch(_) => {
                ErrorClass::Usage
            }
            Error::DimensionMismatch { .. }
            | Error::TooFewSamples { .. }
            | Error::ZeroVariance { .. }
            | Error::EmptyClass(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::DegenerateBandwidth => ErrorClass::Data,
            Error::NonFinite(_)
            | Error::NegativeStatistic { .. }
            | Error::NotPositiveDefinite(_)
            | Error::Graph(_) => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite<'a>(
    values: impl IntoIterator<Item = &'a f64>,
    context: impl FnOnce() -> String,
) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context()))
    }
}
