//! Mean-field amortised inference on the linear-Gaussian system with VAE,
//! β-VAE and HSIC-penalised objectives, plus evaluation and sweeps.

mod config;
mod gap;
mod model;
mod objective;
mod sweep;
mod train;

pub use config::{
    BandwidthMode, DataConfig, ExperimentData, Objective, PenaltyGrouping, TrainConfig, MIN_HCV_BATCH,
};
pub use gap::{encoder_posteriors, evaluate_gap};
pub use model::{
    BoundModel, EncoderOutput, EncoderVars, VariationalModel, CHECKPOINT_FORMAT, LOG_VAR_MAX, LOG_VAR_MIN,
};
pub use objective::{
    elbo, graph_dhsic, graph_gaussian_gram, objective, penalty_dhsic, LatentNoise, ObjectiveTerms,
};
pub use sweep::{
    default_grid, exact_reference, sweep, sweep_on, AggregateRow, ExactReference, RunResult, SweepConfig,
    SweepResult,
};
pub use train::{
    per_row_elbo, trace_csv_bytes, train, write_trace_csv, RunStatus, TraceRecord, TrainOutcome, TRACE_HEADER,
    TRAIN_EVAL_ROWS,
};
