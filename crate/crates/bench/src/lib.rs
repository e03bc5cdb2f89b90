//! Experiment harness: measures how faithfully a learned marketplace tracks
//! the synthetic ground truth, and how policies trained in it fare there.

pub mod experiments;
pub mod report;

pub use experiments::*;
pub use report::{config_hash, pearson, relative_gap, Check, ExperimentReport, ReportSet, Summary};
