use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::gateway::TokenUsage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Untested,
}

/// Who produced the verdicts of a record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictMode {
    #[default]
    Human,
    Scripted,
}

/// The outcome of one task. `verdicts[i]` judges reference use case `i`
/// (zero-based); `pass_rate` is always passes over the number of references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: String,
    pub verdicts: Vec<Verdict>,
    pub tokens: TokenUsage,
    pub h1: u32,
    pub h2: u32,
    pub pass_rate: f64,
    #[serde(default)]
    pub aborted: bool,
    #[serde(default)]
    pub mode: VerdictMode,
}

impl EvalRecord {
    /// A record with every reference untested.
    pub fn new(task_id: impl Into<String>, references: usize) -> Result<Self, BenchError> {
        if references == 0 {
            return Err(BenchError::InvalidInput("a task needs at least one reference use case".into()));
        }
        Ok(Self {
            task_id: task_id.into(),
            verdicts: vec![Verdict::Untested; references],
            tokens: TokenUsage::default(),
            h1: 0,
            h2: 0,
            pass_rate: 0.0,
            aborted: false,
            mode: VerdictMode::Human,
        })
    }

    pub fn with_verdicts(task_id: impl Into<String>, verdicts: Vec<Verdict>) -> Result<Self, BenchError> {
        let mut record = Self::new(task_id, verdicts.len())?;
        record.verdicts = verdicts;
        record.pass_rate = pass_rate(record.passed(), record.total());
        Ok(record)
    }

    pub fn passed(&self) -> usize {
        self.verdicts.iter().filter(|v| **v == Verdict::Pass).count()
    }

    pub fn total(&self) -> usize {
        self.verdicts.len()
    }

    pub fn revisions(&self) -> u32 {
        self.h1 + self.h2
    }

    /// Checks the invariants of a record read from outside.
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.verdicts.is_empty() {
            return Err(BenchError::InvalidInput(format!("record `{}` has no verdicts", self.task_id)));
        }
        if self.h1 > 1 {
            return Err(BenchError::InvalidInput(format!("record `{}` has h1 = {}", self.task_id, self.h1)));
        }
        if self.pass_rate.to_bits() != pass_rate(self.passed(), self.total()).to_bits() {
            return Err(BenchError::InvalidInput(format!(
                "record `{}` states pass rate {} but {} of {} passed",
                self.task_id,
                self.pass_rate,
                self.passed(),
                self.total()
            )));
        }
        Ok(())
    }
}

/// `passed / total` rounded once, so the result is the double nearest the
/// exact fraction.
pub fn pass_rate(passed: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        passed as f64 / total as f64
    }
}

pub fn record_verdict(mut record: EvalRecord, index: usize, verdict: Verdict) -> Result<EvalRecord, BenchError> {
    let total = record.total();
    let slot = record.verdicts.get_mut(index).ok_or_else(|| {
        BenchError::InvalidInput(format!("reference use case {index} is out of range (task has {total})"))
    })?;
    *slot = verdict;
    record.pass_rate = pass_rate(record.passed(), total);
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionRow {
    pub h1: u32,
    pub h2: u32,
    pub task_count: usize,
    pub avg_pass_rate: f64,
    pub total_revisions: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub per_task: Vec<EvalRecord>,
    pub avg_pass_rate: f64,
    pub avg_tokens: f64,
    pub revision_table: Vec<RevisionRow>,
    pub avg_total_revisions: f64,
    /// True when any verdict came from a scripted source rather than a person.
    pub scripted: bool,
}

/// Mean of `values`, summed in ascending order so the result depends only on
/// the multiset.
fn mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn record_order(a: &EvalRecord, b: &EvalRecord) -> std::cmp::Ordering {
    a.task_id
        .cmp(&b.task_id)
        .then(a.pass_rate.total_cmp(&b.pass_rate))
        .then_with(|| {
            (a.h1, a.h2, a.tokens.prompt_tokens, a.tokens.completion_tokens).cmp(&(
                b.h1,
                b.h2,
                b.tokens.prompt_tokens,
                b.tokens.completion_tokens,
            ))
        })
        .then_with(|| (a.aborted, a.mode, &a.verdicts).cmp(&(b.aborted, b.mode, &b.verdicts)))
}

pub fn aggregate(records: &[EvalRecord]) -> Result<SummaryReport, BenchError> {
    if records.is_empty() {
        return Err(BenchError::InvalidInput("no records to aggregate".into()));
    }
    for r in records {
        r.validate()?;
    }
    let mut per_task = records.to_vec();
    per_task.sort_by(record_order);

    let n = per_task.len() as f64;
    let tokens: u128 = per_task.iter().map(|r| r.tokens.total() as u128).sum();
    let revisions: u64 = per_task.iter().map(|r| r.revisions() as u64).sum();

    let mut groups: BTreeMap<(u32, u32), Vec<f64>> = BTreeMap::new();
    for r in &per_task {
        groups.entry((r.h1, r.h2)).or_default().push(r.pass_rate);
    }
    let revision_table = groups
        .into_iter()
        .map(|((h1, h2), rates)| RevisionRow {
            h1,
            h2,
            task_count: rates.len(),
            avg_pass_rate: mean(rates),
            total_revisions: h1 + h2,
        })
        .collect();

    Ok(SummaryReport {
        avg_pass_rate: mean(per_task.iter().map(|r| r.pass_rate).collect()),
        avg_tokens: tokens as f64 / n,
        avg_total_revisions: revisions as f64 / n,
        scripted: per_task.iter().any(|r| r.mode == VerdictMode::Scripted),
        revision_table,
        per_task,
    })
}

pub const REPORT_SCHEMA: &str = "caseloop.report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// The JSON document, readable back with [`import_report`].
    Structured,
    /// CSV: one row per task and a closing `(average)` row.
    Table,
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    schema: String,
    version: u32,
    #[serde(flatten)]
    report: SummaryReport,
}

pub fn render_report(report: &SummaryReport, format: ReportFormat) -> Result<String, BenchError> {
    match format {
        ReportFormat::Structured => {
            let file = ReportFile { schema: REPORT_SCHEMA.into(), version: REPORT_VERSION, report: report.clone() };
            let mut text = serde_json::to_string_pretty(&file).map_err(|e| BenchError::Io(e.to_string()))?;
            text.push('\n');
            Ok(text)
        }
        ReportFormat::Table => render_table(report),
    }
}

const TABLE_HEADER: [&str; 12] = [
    "task_id",
    "passed",
    "total",
    "pass_rate",
    "prompt_tokens",
    "completion_tokens",
    "total_tokens",
    "h1",
    "h2",
    "total_revisions",
    "aborted",
    "mode",
];

fn render_table(report: &SummaryReport) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| BenchError::Io(e.to_string());
    w.write_record(TABLE_HEADER).map_err(csv_err)?;
    for r in &report.per_task {
        let mode = match r.mode {
            VerdictMode::Human => "human",
            VerdictMode::Scripted => "scripted",
        };
        w.write_record([
            r.task_id.clone(),
            r.passed().to_string(),
            r.total().to_string(),
            r.pass_rate.to_string(),
            r.tokens.prompt_tokens.to_string(),
            r.tokens.completion_tokens.to_string(),
            r.tokens.total().to_string(),
            r.h1.to_string(),
            r.h2.to_string(),
            r.revisions().to_string(),
            r.aborted.to_string(),
            mode.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let mode = if report.scripted { "scripted" } else { "human" };
    w.write_record([
        "(average)".to_string(),
        String::new(),
        String::new(),
        report.avg_pass_rate.to_string(),
        String::new(),
        String::new(),
        report.avg_tokens.to_string(),
        String::new(),
        String::new(),
        report.avg_total_revisions.to_string(),
        String::new(),
        mode.to_string(),
    ])
    .map_err(csv_err)?;
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn export_report(report: &SummaryReport, path: &Path, format: ReportFormat) -> Result<(), BenchError> {
    let text = render_report(report, format)?;
    std::fs::write(path, text).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))
}

pub fn parse_report(text: &str) -> Result<SummaryReport, BenchError> {
    let file: ReportFile = serde_json::from_str(text).map_err(|e| BenchError::InvalidInput(format!("report: {e}")))?;
    if file.schema != REPORT_SCHEMA || file.version != REPORT_VERSION {
        return Err(BenchError::InvalidInput(format!("unsupported report header {}/{}", file.schema, file.version)));
    }
    Ok(file.report)
}

pub fn import_report(path: &Path) -> Result<SummaryReport, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
    parse_report(&text)
}

/// Reads a records file: one JSON record per line, blank lines ignored.
pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = serde_json::from_str(line)
            .map_err(|e| BenchError::InvalidInput(format!("{} line {}: {e}", path.display(), i + 1)))?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

pub fn append_record(path: &Path, record: &EvalRecord) -> Result<(), BenchError> {
    let io = |e: std::io::Error| BenchError::Io(format!("{}: {e}", path.display()));
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let line = serde_json::to_string(record).map_err(|e| BenchError::Io(e.to_string()))?;
    writeln!(file, "{line}").map_err(io)
}
