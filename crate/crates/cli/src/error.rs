use hcv_core::ErrorClass;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hcv_core::Error),

    #[error("training aborted at step {step}: {message}")]
    Aborted {
        step: usize,
        message: String,
        class: ErrorClass,
    },

    #[error("rerun differs from the manifest for: {0}")]
    Mismatch(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

fn class_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numerical => EXIT_NUMERICAL,
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => class_code(e.class()),
            CliError::Aborted { class, .. } => class_code(*class),
            CliError::Mismatch(_) => EXIT_NUMERICAL,
        }
    }
}
