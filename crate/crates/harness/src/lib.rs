//! Training, evaluation, ablation and plotting around the MSTF model.

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod plot;
pub mod report;
pub mod run;
pub mod train;

pub use config::{DatasetConfig, ExperimentConfig, LrSchedule, SplitMode};
pub use error::{HarnessError, Result};
pub use run::{RunOutcome, RunRecord};
