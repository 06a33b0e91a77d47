//! Metrics, the multi-seed experiment runner and report files.

pub mod experiment;
pub mod metrics;
pub mod report;

pub use experiment::{
    ablation_table, fit_stage, predict_stage, run_comparison, run_experiment, AblationCell, ExperimentSettings,
    FittedModels, MultiSeedReport, Pipeline, PreparedData, SeedReport, SummaryRow,
};
pub use metrics::{confusion, mean_std, metrics, ConfusionMatrix, MetricsReport};
pub use report::{ablation_csv, ablation_grid, confusion_svg, report_csv, summary_csv, write_reports, REPORT_HEADER, SUMMARY_HEADER};
