use std::path::{Path, PathBuf};

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CRASH: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ASSUMPTION: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Artifacts were written, but a declared assumption was contradicted.
    #[error("assumption violated: {0}")]
    AssumptionReport(String),

    #[error(transparent)]
    Core(#[from] ttsa_core::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        use ttsa_core::Error as E;
        match self {
            HarnessError::Config(_) => EXIT_CONFIG,
            HarnessError::Io { .. } => EXIT_CRASH,
            HarnessError::AssumptionReport(_) => EXIT_ASSUMPTION,
            HarnessError::Core(e) => match e {
                E::InvalidModel(_) | E::DimensionMismatch { .. } | E::InvalidConfig(_) | E::Precondition(_) => EXIT_CONFIG,
                E::NonErgodic(_) | E::NonMixing | E::Singular { .. } | E::Support { .. } | E::AssumptionViolation(_) => EXIT_ASSUMPTION,
                E::ResourceCap(_) => EXIT_RESOURCE,
                E::InsufficientSignal(_) => EXIT_CRASH,
            },
        }
    }
}
