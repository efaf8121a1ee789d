//! Scene files, experiment runners and reports for the `contactdiff` binary.

pub mod error;
pub mod experiments;
pub mod metrics;
pub mod scene;

pub use error::{CliError, Result};
pub use metrics::{RunMetrics, RunSummary, StepRow};
pub use scene::SceneConfig;
