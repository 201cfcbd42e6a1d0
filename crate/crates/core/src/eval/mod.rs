//! Scenario runs, ROC/AUC metrics and the delay × setting grid.

mod grid;
mod roc;
mod scenario;

pub use grid::{
    derive_seed, format_table, grid_evaluate, mean_std, write_results, write_summary, BankInfo, CellResult, GridConfig,
    GridReport, SummaryRow, INJECT_STREAM, TEST_STREAM, TRAIN_STREAM,
};
pub use roc::{roc_auc, RocPoint, RocResult};
pub use scenario::{run_pipeline, run_scenario, training_innovations, Detector, PipelineConfig, Scenario, ScenarioRun};
