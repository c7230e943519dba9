//! Orchestration of the capture pipeline: configuration, stage runners,
//! metrics and reports.

pub mod config;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod report;

pub use config::{PipelineConfig, CONFIG_FORMAT};
pub use error::{CliError, Result};
pub use metrics::{mpjpe, pck, per_frame_mpjpe};
pub use report::{evaluate, EvalReport, StageMetrics};
