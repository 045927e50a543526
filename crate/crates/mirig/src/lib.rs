//! Experiment sweeps over the contrastive trainer and MI estimator, with
//! CSV / JSON / SVG reports.

pub mod config;
pub mod plot;
pub mod report;
pub mod sweep;

pub use config::SweepConfig;
pub use report::{emit_report, Format, ReportRow, RunReport};
pub use sweep::{run_case_batch_size, run_case_infomin, run_negative_sampling, run_sweep, run_task_grid};
