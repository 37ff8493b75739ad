//! Experiment specs, runs, ablation suites, ingestion and reports.

mod ablation;
mod ingest;
mod report;
mod run;
mod source;
mod spec;

pub use ablation::{
    check_suite, default_base, mean_std, run_ablation_suite, AblationRow, AblationRun,
    AblationTable, SuitePreset,
};
pub use ingest::{
    ingest_external_sample, read_class_names, DescribedInstance, IngestedSample, InstanceDescriptor,
};
pub use report::{report, ExperimentSummary, RunReport, SeedSummary, PLOT_FILE};
pub use run::{
    check_outputs, run_experiment, run_on_dataset, seed_threads, RunOptions, RunOutcome,
    SeedFailure, SeedResult, HISTORY_FILE, METRICS_FILE, SPEC_FILE, THREADS_ENV,
};
pub use source::{
    build_tables, dataset_catalog, label_names, language_table, load_dataset, SimSource,
};
pub use spec::{CatalogRef, DatasetRef, ExperimentSpec, GenerateBlock, NoiseConfig, TableConfig};
