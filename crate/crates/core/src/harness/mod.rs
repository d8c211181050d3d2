//! Experiment harness: configuration, protocol, metrics, data and reports.

pub mod config;
pub mod dataset;
pub mod metrics;
pub mod protocol;
pub mod report;
pub mod training;

pub use config::{Config, TrackerKind};
pub use metrics::{compute_de, compute_fps, compute_fs, FrameLog, FsRule, TrialLog};
pub use protocol::{run_protocol, run_trial, TrialKey, TrialResult};
pub use report::{MetricsReport, TrialRow};
