//! Benchmark harness: task suites, per-task verdict records, and the
//! aggregate pass-rate, token and revision report.

mod drive;
mod record;
mod suite;

pub use drive::{
    best_of, feedback_for, Check, CheckedVerdicts, Driven, Harness, Judgement, QueuedVerdicts, Review, VerdictSource,
};
pub use record::{
    aggregate, append_record, export_report, import_report, parse_report, pass_rate, read_records, record_verdict,
    render_report, EvalRecord, ReportFormat, RevisionRow, SummaryReport, Verdict, VerdictMode,
};
pub use suite::{load_tasks, parse_suite, render_suite, BenchmarkTask, Location, SuiteIssue, SAMPLE_SUITE};

use crate::session::SessionError;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("suite {path}: {}", issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Suite { path: String, issues: Vec<SuiteIssue> },
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl BenchError {
    pub fn code(&self) -> &'static str {
        match self {
            BenchError::InvalidInput(_) => "InvalidInput",
            BenchError::Suite { .. } => "SuiteError",
            BenchError::Io(_) => "IoError",
            BenchError::Session(e) => e.code(),
        }
    }

    pub fn is_client_error(&self) -> bool {
        match self {
            BenchError::InvalidInput(_) | BenchError::Suite { .. } => true,
            BenchError::Io(_) => false,
            BenchError::Session(e) => e.is_client_error(),
        }
    }
}
