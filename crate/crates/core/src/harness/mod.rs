//! Experiment orchestration: configuration, the end-to-end pipeline,
//! baselines, metrics, the FLOPs model and report files.

mod config;
mod cost;
mod metrics;
mod report;
mod run;

pub use config::{
    default_synthetic_spec, load_dataset_file, DatasetSource, ExperimentConfig, FedAvgSettings, Method, ScheduleParams,
    SEED_ENV,
};
pub use cost::{
    estimate_breakdown, estimate_fedavg_flops, estimate_flops, objective_eval_cost, CostBreakdown, CostModelParams,
};
pub use metrics::{ci_half_width, relative_change, Summary};
pub use report::{
    emit_report, emit_sweep, find_reports, read_bench_dir, read_report, relative_change_csv, report_json, results_csv,
    round_json, write_atomic, write_bench_dir, BenchManifest, RESULTS_JSON,
};
pub use run::{
    ensemble_accuracy, run_experiment, training_seed, BenchSnapshot, CacheStats, ClientInfo, CostReport,
    ExperimentOutcome, ExperimentReport, FedPaeDetails, MethodResult, NetworkStats, RelativeChangeRow,
};

#[cfg(test)]
mod tests;
