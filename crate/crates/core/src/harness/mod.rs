//! Experiment orchestration: NMSE, seeded sweeps over measurement and
//! anchor budgets, result files, and dataset export for learned solvers.

mod config;
mod dataset;
mod metrics;
mod sweep;

pub use config::{DeploymentConfig, ExperimentConfig, Method, Sweep, SweepPoint};
pub use dataset::{
    export_dataset, read_manifest, read_split, split_blocks, CacheSample, DatasetConfig,
    DatasetManifest, DatasetSample, LinkSample, Split, SplitInfo, SplitWeights, DATASET_FORMAT,
    DATASET_VERSION,
};
pub use metrics::{nmse, NmseAccumulator};
pub use sweep::{
    read_records_csv, run_sweep, solve_instance, summarize, write_records_csv, write_sweep_outputs,
    Curve, CurvePoint, InstanceReport, InstanceSpec, ResultRecord, Summary, SweepOutput,
};
