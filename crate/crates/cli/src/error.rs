use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing-input: {} not found; run `{producer}` first", path.display())]
    MissingInput { path: PathBuf, producer: &'static str },

    #[error("config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("output-exists: {} already exists and is never overwritten", .0.display())]
    OutputExists(PathBuf),

    #[error("io: {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("pipeline: {0}")]
    Core(#[from] vtlab_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Stable identifier printed first on the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::MissingInput { .. } => "missing-input",
            CliError::Config(_) => "config",
            CliError::OutputExists(_) => "output-exists",
            CliError::Io { .. } => "io",
            CliError::Core(_) => "pipeline",
        }
    }
}
