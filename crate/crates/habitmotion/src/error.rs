use std::path::{Path, PathBuf};

use habitmotion_core::Error as CoreError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DOMAIN: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {detail}")]
    Schema { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: CoreError,
    },
}

impl AppError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn schema(path: &Path, detail: impl Into<String>) -> Self {
        AppError::Schema {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    pub fn core(context: impl Into<String>, source: CoreError) -> Self {
        AppError::Core {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Schema { .. } => EXIT_CONFIG,
            AppError::Io { .. } => EXIT_IO,
            AppError::Core { source, .. } => match source {
                CoreError::InvalidArgument(_) | CoreError::Shape { .. } => EXIT_CONFIG,
                CoreError::Checkpoint(_) => EXIT_IO,
                _ => EXIT_DOMAIN,
            },
        }
    }
}

/// Attaches a context string to core errors.
pub trait CoreContext<T> {
    fn context(self, context: impl Into<String>) -> Result<T>;
}

impl<T> CoreContext<T> for std::result::Result<T, CoreError> {
    fn context(self, context: impl Into<String>) -> Result<T> {
        self.map_err(|e| AppError::core(context, e))
    }
}
