use std::path::Path;

/// Failure classes of the pipeline, each with its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) => 3,
            AppError::Divergence(_) => 4,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        AppError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<promptmr_core::Error> for AppError {
    fn from(e: promptmr_core::Error) -> Self {
        use promptmr_core::Error as E;
        match e {
            E::Config(_) => AppError::Config(e.to_string()),
            E::Divergence(_) => AppError::Divergence(e.to_string()),
            E::Shape { .. } | E::Index { .. } | E::Metric(_) => AppError::Data(e.to_string()),
        }
    }
}
