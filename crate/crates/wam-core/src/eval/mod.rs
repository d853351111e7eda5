//! Closed-loop benchmarking: suites over seen and held-out verbs, the
//! drift study, step-count comparisons, and report emission.

mod experiments;
mod progress;
mod rollout;
mod suite;

pub use experiments::{
    aggregate, drift_experiment, engine_source_factory, eval_cell, pooled_stderr,
    stepcount_experiment, teacher_forced_mse, write_cells_csv, write_ndjson, CellStats,
    DriftReport, StepCountRow,
    SuiteSpec,
};
pub use progress::ProgressTracker;
pub use rollout::{
    config_fingerprint, run_direct_policy, run_rollout, score_trace, RandomSource, RolloutReport,
};
pub use suite::{sample_task, EvalTask, Suite};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Exec(#[from] crate::exec::ExecError),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Infer(#[from] crate::infer::InferError),
    #[error(transparent)]
    Model(#[from] crate::model::WamError),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("report error: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
