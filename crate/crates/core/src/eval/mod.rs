//! Pointing Game scoring and the randomisation, repeatability and
//! cross-architecture protocols built on it, plus report output.

mod experiment;
mod grid;
mod pointing;
mod report;

pub use experiment::{
    dom, dom_table, randomization_experiment, summarize, Condition, DoMRecord, ExperimentReport,
    ExperimentSetup, RunRecord,
};
pub use grid::{
    load_grid_data, run_grid, run_grid_on, train_donor, DatasetSource, DonorConfig, GridConfig,
    GridData, TEXTURE_CLASSES,
};
pub use pointing::{
    pointing_accuracy, pointing_hit, pointing_study, smoothing_study, MethodScores, PointingConfig,
    PointingRecord, PointingResult, SmoothingRow, TargetPolicy,
};
pub use report::{
    emit_report, overlay, read_randomization_csv, smoothing_summaries, write_classifier_csv,
    write_dom_csv, write_failures_csv, write_overlay, write_pointing_csv, write_randomization_csv,
    write_smoothing_csv, CellFailure, CsvReportRow, ReportBundle, SmoothingSummary, CLASSIFIER_CSV,
    DETAILS_JSON, DETAILS_SCHEMA, DOM_CSV, FAILURES_CSV, RANDOMIZATION_CSV, SMOOTHING_CSV,
};
