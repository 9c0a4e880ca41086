//! Scripted stand-ins for the model endpoint and the project runner, used by
//! tests, benches, and offline demos.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde_json::{json, Value};

use crate::gateway::{Transport, TransportFailure};
use crate::runner::{ProjectRunner, RunOutcome, RunStatus, RunnerError, TestReport, Workspace};

/// A chat-completion response body carrying `content`.
pub fn completion_body(content: &str, prompt_tokens: u64, completion_tokens: u64) -> Value {
    json!({
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop"
        }],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "total_tokens": prompt_tokens + completion_tokens
        }
    })
}

/// Rough token estimate: one token per four bytes, at least one.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4).max(1)
}

/// Answers requests in order from a fixed script.
#[derive(Default)]
pub struct ScriptedTransport {
    script: Mutex<VecDeque<Result<String, TransportFailure>>>,
    seen: Mutex<Vec<Value>>,
}

impl ScriptedTransport {
    pub fn new<I, S>(answers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { script: Mutex::new(answers.into_iter().map(|a| Ok(a.into())).collect()), seen: Mutex::new(Vec::new()) }
    }

    pub fn push(&self, answer: impl Into<String>) {
        self.script.lock().unwrap().push_back(Ok(answer.into()));
    }

    pub fn push_failure(&self, failure: TransportFailure) {
        self.script.lock().unwrap().push_back(Err(failure));
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }

    /// Request bodies received so far.
    pub fn requests(&self) -> Vec<Value> {
        self.seen.lock().unwrap().clone()
    }
}

impl Transport for ScriptedTransport {
    fn post(&self, _endpoint: &str, _bearer: Option<&str>, body: &Value) -> Result<Value, TransportFailure> {
        self.seen.lock().unwrap().push(body.clone());
        let next = self.script.lock().unwrap().pop_front();
        let answer =
            next.ok_or_else(|| TransportFailure::Status { status: 400, body: "script exhausted".into() })??;
        let prompt: String =
            body["messages"].as_array().into_iter().flatten().filter_map(|m| m["content"].as_str()).collect();
        Ok(completion_body(&answer, estimate_tokens(&prompt), estimate_tokens(&answer)))
    }
}

/// Returns queued outcomes; once a queue runs dry, runs start cleanly and
/// every test passes.
#[derive(Default)]
pub struct ScriptedRunner {
    entries: Mutex<VecDeque<RunOutcome>>,
    reports: Mutex<VecDeque<TestReport>>,
    calls: Mutex<Vec<String>>,
}

impl ScriptedRunner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_entry(&self, outcome: RunOutcome) {
        self.entries.lock().unwrap().push_back(outcome);
    }

    pub fn push_report(&self, report: TestReport) {
        self.reports.lock().unwrap().push_back(report);
    }

    /// `run_entry@<round>` and `run_tests@<round>` in call order.
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }
}

/// A failed start with `traceback` on stderr.
pub fn crashed(traceback: &str) -> RunOutcome {
    RunOutcome {
        status: RunStatus::RuntimeError,
        exit_code: Some(1),
        stdout: String::new(),
        stderr: format!("{traceback}\n"),
        error_excerpt: Some(traceback.to_string()),
        duration_ms: 5,
    }
}

pub fn started() -> RunOutcome {
    RunOutcome {
        status: RunStatus::CleanStart,
        exit_code: Some(0),
        stdout: String::new(),
        stderr: String::new(),
        error_excerpt: None,
        duration_ms: 5,
    }
}

impl ProjectRunner for ScriptedRunner {
    fn run_entry(&self, ws: &Workspace) -> Result<RunOutcome, RunnerError> {
        self.calls.lock().unwrap().push(format!("run_entry@{}", ws.round));
        Ok(self.entries.lock().unwrap().pop_front().unwrap_or_else(started))
    }

    fn run_tests(&self, ws: &Workspace, test_files: &[String]) -> Result<TestReport, RunnerError> {
        self.calls.lock().unwrap().push(format!("run_tests@{}", ws.round));
        Ok(self.reports.lock().unwrap().pop_front().unwrap_or(TestReport {
            total: test_files.len(),
            passed: test_files.len(),
            failures: Vec::new(),
        }))
    }
}
