//! Reads the verbose output of Python's unittest runner.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFailure {
    pub test_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestReport {
    pub total: usize,
    pub passed: usize,
    pub failures: Vec<TestFailure>,
}

impl TestReport {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty() && self.passed == self.total
    }

    pub fn merge(&mut self, other: TestReport) {
        self.total += other.total;
        self.passed += other.passed;
        self.failures.extend(other.failures);
    }

    /// Failure messages joined for a bug-fix prompt.
    pub fn problem_text(&self) -> String {
        self.failures.iter().map(|f| format!("{}\n{}", f.test_id, f.message)).collect::<Vec<_>>().join("\n\n")
    }
}

const SEPARATOR_BOLD: &str = "======================================================================";
const SEPARATOR_THIN: &str = "----------------------------------------------------------------------";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Pass,
    Fail,
}

fn status_of(rest: &str) -> Option<Verdict> {
    let rest = rest.trim();
    if rest == "ok" || rest.starts_with("skipped") || rest == "expected failure" {
        Some(Verdict::Pass)
    } else if rest == "FAIL" || rest == "ERROR" || rest == "unexpected success" {
        Some(Verdict::Fail)
    } else {
        None
    }
}

/// Parses `-v` output. Returns `None` when no per-test line was found.
pub fn parse_verbose(output: &str) -> Option<TestReport> {
    let lines: Vec<&str> = output.lines().collect();
    let mut results: Vec<(String, Verdict)> = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let Some((head, rest)) = line.rsplit_once(" ... ") else { continue };
        let Some(verdict) = status_of(rest) else { continue };
        // a docstring moves the description onto its own line after the id
        let id = match i.checked_sub(1).map(|p| lines[p]) {
            Some(prev) if is_test_id(prev) && !is_test_id(head) => prev.trim(),
            _ => head.trim(),
        };
        results.push((id.to_string(), verdict));
    }

    let mut messages: Vec<(String, String)> = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i] == SEPARATOR_BOLD {
            if let Some(id) =
                lines.get(i + 1).and_then(|l| l.strip_prefix("FAIL: ").or_else(|| l.strip_prefix("ERROR: ")))
            {
                let mut j = i + 2;
                if lines.get(j) == Some(&SEPARATOR_THIN) {
                    j += 1;
                } else if lines.get(j + 1) == Some(&SEPARATOR_THIN) {
                    // docstring line under the id
                    j += 2;
                }
                let start = j;
                while j < lines.len()
                    && lines[j] != SEPARATOR_BOLD
                    && !(lines[j] == SEPARATOR_THIN && lines.get(j + 1).is_some_and(|l| l.starts_with("Ran ")))
                {
                    j += 1;
                }
                messages.push((id.trim().to_string(), lines[start..j].join("\n").trim().to_string()));
                i = j;
                continue;
            }
        }
        i += 1;
    }

    if results.is_empty() && messages.is_empty() {
        return None;
    }
    let mut report = TestReport::default();
    for (id, verdict) in &results {
        report.total += 1;
        match verdict {
            Verdict::Pass => report.passed += 1,
            Verdict::Fail => {
                let message = messages
                    .iter()
                    .position(|(m, _)| m == id)
                    .map(|p| messages.remove(p).1)
                    .unwrap_or_else(|| "unexpected success".to_string());
                report.failures.push(TestFailure { test_id: id.clone(), message });
            }
        }
    }
    // errors raised outside a test (class setup, import failure) have no
    // per-test line
    for (id, message) in messages {
        report.total += 1;
        report.failures.push(TestFailure { test_id: id, message });
    }
    Some(report)
}

fn is_test_id(line: &str) -> bool {
    let line = line.trim();
    line.ends_with(')') && line.contains(" (") && !line.contains(" ... ")
}
