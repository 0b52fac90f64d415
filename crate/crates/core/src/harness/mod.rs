//! Experiment orchestration behind the `srank-lab` commands.

mod config;
mod data;
mod diagnose;
mod overhead;
mod train;
mod validate;

pub use config::{AlignmentMode, RunConfig};
pub use data::{DataSpec, Generator, Task};
pub use diagnose::{cmd_diagnose, probe_tokens, DiagnoseReport, DiagnoseRow};
pub use overhead::{
    cmd_fit_throughput, cmd_overhead, msign_flops, parse_throughput_csv, step_flops, svd_flops_square, svd_flops_wide,
    OverheadReport, ThroughputFit, ThroughputSample,
};
pub use train::{
    cmd_train, early_layer_weights, geo_srank_of, run_training, write_outputs, MetricsRow, RunStatus, RunSummary,
    TrainOutcome, METRICS_HEADER,
};
pub use validate::{
    cmd_validate_theorems, max_srank_increase, msign_contract, random_weight, report_text, sweep_feedback,
    sweep_feedback_restoration, sweep_lowrank, sweep_msign, MSignContract,
};
