//! Pipeline driver behind the `forklens` binary.

pub mod config;
pub mod output;
pub mod pipeline;

use thiserror::Error;

pub use config::PipelineConfig;
pub use pipeline::{run_pipeline, RunManifest, RunOutcome, Stage};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration at {field}: {message}")]
    ConfigInvalid { field: String, message: String },
    #[error("stage {stage} needs {missing}; run the stage that produces it first")]
    StageDependencyMissing { stage: &'static str, missing: String },
    #[error("stage {stage} failed ({context}): {message}")]
    StageFailed {
        stage: &'static str,
        context: String,
        message: String,
    },
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

impl PipelineError {
    /// Process exit code: 2 for configuration and usage problems (including
    /// running a stage before its inputs exist), 3 for anything that stopped
    /// a stage.
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::ConfigInvalid { .. } | PipelineError::StageDependencyMissing { .. } => 2,
            _ => 3,
        }
    }
}
