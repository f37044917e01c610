//! Front-end errors and their process exit codes.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed json in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("checkpoint was written for config hash {checkpoint}, current config hashes to {config}")]
    ResumeMismatch { checkpoint: String, config: String },
    #[error("no cached baseline at {0}; run `lbac baseline` first")]
    MissingBaseline(PathBuf),
    #[error("malformed results: {0}")]
    MalformedResults(String),
    #[error(transparent)]
    Core(#[from] lbac_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Short category name used in log records.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Json { .. } => "json",
            CliError::ResumeMismatch { .. } => "resume_mismatch",
            CliError::MissingBaseline(_) => "missing_baseline",
            CliError::MalformedResults(_) => "malformed_results",
            CliError::Core(lbac_core::Error::Config(_)) => "config",
            CliError::Core(lbac_core::Error::ControllerDiverged { .. }) => "diverged",
            CliError::Core(_) => "simulation",
        }
    }

    /// Exit code; 2 is left to argument parsing.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 3,
            "io" => 4,
            "json" => 5,
            "resume_mismatch" => 6,
            "missing_baseline" => 7,
            "malformed_results" => 8,
            "diverged" => 9,
            _ => 10,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
