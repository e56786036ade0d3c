use std::path::PathBuf;

use hpinn_autodiff::AutodiffError;
use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {detail}", path.display())]
    Parse { path: PathBuf, line: usize, detail: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("non-finite values after {0}")]
    NonFinite(String),

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: validation RMSE {val_rmse} exceeded {limit}")]
    Diverged { epoch: usize, val_rmse: f64, limit: f64 },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            CoreError::MissingFile(path)
        } else {
            CoreError::Io { path, source }
        }
    }

    /// True for errors caused by user input rather than computation.
    pub fn is_validation(&self) -> bool {
        matches!(self, CoreError::Validation(_) | CoreError::Config(_))
    }
}
