//! Configuration-driven benchmark runs: generate, calibrate, train,
//! explain, score and report.

mod aggregate;
mod config;
mod pipeline;
mod report;

pub use aggregate::{aggregate, quantile, read_scores, write_scores, BoxStats, CellKey, ReportCell, ScoreRow};
pub use config::{BenchmarkConfig, CalibrationConfig, DatasetConfig, MetricKind, SizePreset};
pub use pipeline::{method_ids, Cell, Pipeline, RunOutcome, Stage};
pub use report::{
    emit_report, report_csv, report_svg, ArtifactRef, BenchmarkReport, CalibrationEntry, CellFailure, WHISKER_CONVENTION,
};
