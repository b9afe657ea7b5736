//! Experiment driver: configuration, training with per-epoch evaluation and
//! temperature scaling, sweeps, summaries, Pareto fronts, lemma checks and
//! report files.

mod config;
mod lemmas;
mod pareto;
mod report;
mod summary;
mod sweep;
mod train;

pub use config::{rho_preset, DatasetRef, ExperimentConfig, GridCell, LAMBDA_GRID};
pub use lemmas::{
    ece_sigma, verify_lemmas, verify_with_temperature, Check, LemmaReport, MIN_SAMPLES,
};
pub use pareto::{pareto_front, points_from_logs, ParetoPoint, DEFAULT_ACCURACY_SLACK};
pub use report::{
    emit_reports, pareto_svg, read_pareto, write_pareto, write_run_log, ReportOptions,
    RUN_LOG_COLUMNS,
};
pub use summary::{best_metric_summary, Objective, SummaryRow};
pub use sweep::{sweep, CellFailure, SweepResult};
pub use train::{
    load_dataset, prepare, run_cell, run_experiment, EpochRow, PreparedData, RunId, RunLog,
    TrainSettings,
};
