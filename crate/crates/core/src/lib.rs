//! Instruction reframing toolkit.
//!
//! Parses Natural-Instructions-style task files, rewrites their instructions with
//! five deterministic reframing operators, runs decomposed sub-task pipelines
//! against a pluggable completion backend, and scores raw vs. reframed prompts
//! with ROUGE-L and content-free calibration.

pub mod calibrate;
pub mod harness;
pub mod lm;
pub mod metrics;
pub mod pipeline;
pub mod reframe;
pub mod schema;

pub use schema::{Example, FieldMap, Instance, TaskCategory, TaskInstruction};

/// Toolkit version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
