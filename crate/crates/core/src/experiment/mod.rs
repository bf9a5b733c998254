//! End-to-end studies: configuration, datasets, runs and generator checks.

use std::path::Path;

use crate::error::Error;

mod config;
mod dataset;
mod runner;
mod validate;

pub use config::{ExperimentConfig, SamplerKind, TaskMode};
pub use dataset::{
    generate_dataset, load_dataset, synthesize_image, Dataset, DatasetEntry, BACKGROUND_LABEL, NOISE_LABEL, SIGNAL_LABEL,
};
pub use runner::{
    read_scores, roc_report, run_experiment, score_set, write_roc, write_scores, write_summary, ChainDiagnostics,
    ExperimentOutput, RocSummary, ScoreRow, Summary, BOOTSTRAP_LABEL, CHAIN_LABEL,
};
pub use validate::{
    read_forward_check, validate_generator, write_forward_check, ForwardCase, ForwardCheck, GeneratorReport,
};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const DATASET_SUBDIR: &str = "dataset";
pub const SCORES_FILE: &str = "scores.csv";
pub const CHAINS_FILE: &str = "chains.csv";
pub const ROC_FILE: &str = "roc.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FAILURES_FILE: &str = "failures.csv";

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

// A file that cannot be opened is an I/O problem, not a format one.
fn csv_open(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(path, io);
        }
        unreachable!("is_io_error implies an io kind");
    }
    csv_err(path, e)
}
