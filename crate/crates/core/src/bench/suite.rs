use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BenchError;

pub const SUITE_SCHEMA: &str = "caseloop.suite";
pub const SUITE_VERSION: u32 = 1;

/// The suite shipped with the crate: iris classifier, airplane war game,
/// voice assistant.
pub const SAMPLE_SUITE: &str = include_str!("../../assets/suites/sample.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkTask {
    pub task_id: String,
    pub name: String,
    pub prompt: String,
    pub reference_use_cases: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    schema: String,
    version: u32,
    tasks: Vec<BenchmarkTask>,
}

/// Where a suite problem was found: a text position for syntax errors, a
/// task position for content errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Text { line: usize, column: usize },
    Task { index: usize, task_id: String },
    File,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Text { line, column } => write!(f, "line {line}, column {column}"),
            Location::Task { index, task_id } => write!(f, "task #{index} (`{task_id}`)"),
            Location::File => f.write_str("file"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteIssue {
    pub location: Location,
    pub message: String,
}

impl std::fmt::Display for SuiteIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

pub fn parse_suite(text: &str) -> Result<Vec<BenchmarkTask>, Vec<SuiteIssue>> {
    if text.trim().is_empty() {
        return Err(vec![SuiteIssue { location: Location::File, message: "suite file is empty".into() }]);
    }
    let file: SuiteFile = serde_json::from_str(text).map_err(|e| {
        vec![SuiteIssue { location: Location::Text { line: e.line(), column: e.column() }, message: e.to_string() }]
    })?;
    let mut issues = Vec::new();
    if file.schema != SUITE_SCHEMA || file.version != SUITE_VERSION {
        issues.push(SuiteIssue {
            location: Location::File,
            message: format!(
                "unsupported header {}/{}, expected {SUITE_SCHEMA}/{SUITE_VERSION}",
                file.schema, file.version
            ),
        });
    }
    if file.tasks.is_empty() {
        issues.push(SuiteIssue { location: Location::File, message: "suite has no tasks".into() });
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (index, task) in file.tasks.iter().enumerate() {
        let at = || Location::Task { index, task_id: task.task_id.clone() };
        if task.task_id.trim().is_empty() {
            issues.push(SuiteIssue { location: at(), message: "task_id is blank".into() });
        }
        if let Some(first) = seen.insert(&task.task_id, index) {
            issues.push(SuiteIssue {
                location: at(),
                message: format!("duplicate task_id, first used by task #{first}"),
            });
        }
        if task.prompt.trim().is_empty() {
            issues.push(SuiteIssue { location: at(), message: "prompt is blank".into() });
        }
        if task.reference_use_cases.is_empty() {
            issues.push(SuiteIssue { location: at(), message: "reference_use_cases is empty".into() });
        }
        if let Some(i) = task.reference_use_cases.iter().position(|u| u.trim().is_empty()) {
            issues.push(SuiteIssue { location: at(), message: format!("reference use case {} is blank", i + 1) });
        }
    }
    if issues.is_empty() {
        Ok(file.tasks)
    } else {
        Err(issues)
    }
}

pub fn load_tasks(path: &Path) -> Result<Vec<BenchmarkTask>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
    parse_suite(&text).map_err(|issues| BenchError::Suite { path: path.display().to_string(), issues })
}

pub fn render_suite(tasks: &[BenchmarkTask]) -> String {
    let file = SuiteFile { schema: SUITE_SCHEMA.into(), version: SUITE_VERSION, tasks: tasks.to_vec() };
    let mut text = serde_json::to_string_pretty(&file).expect("suite serializes");
    text.push('\n');
    text
}
