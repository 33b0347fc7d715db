//! Experiment runner: loads tasks and reframings, evaluates every
//! (task, condition, instance) triple against a backend, and writes the report
//! artifacts. [`cli`] wraps it as the `reframe` binary.

pub mod cli;
mod config;
mod run;

pub use config::{BackendConfig, Condition, EncodingSelection, ExperimentConfig, Shots};
pub use run::{
    build_backend, load_tasks, prepare, render_report, run, run_with_backend, write_report_artifacts, PreparedRun,
    PreparedTask, RunManifest, RunOutcome, MANIFEST_FILE,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl HarnessError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Validation(_) => 1,
            HarnessError::Runtime(_) => 2,
        }
    }
}
