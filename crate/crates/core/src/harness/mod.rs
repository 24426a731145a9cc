//! Configuration-driven experiments comparing oracles with predictors.

pub mod config;
pub mod report;
pub mod run;

pub use config::{ConfigFile, Experiment, ExperimentConfig};
pub use report::{PredictionReport, ReportRow, CSV_HEADER};
pub use run::{run_experiment, run_with_threads};
