//! A stand-in chat-completion server, the calculator fixture, and helpers
//! for running the binary.
#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use caseloop_core::fakes::{completion_body, estimate_tokens};
use serde_json::Value;

pub const TASK: &str = "a calculator that adds two numbers";

pub const CALC_CRASH: &str = "Traceback (most recent call last):\n  File \"main.py\", line 3, in <module>\n    print(calc.add('1', 2))\n  File \"calc.py\", line 2, in add\n    return a + b\nTypeError: can only concatenate str (not \"int\") to str";

fn fenced(name: &str, body: &str) -> String {
    format!("{name}\n```python\n{body}\n```")
}

fn unit_test() -> String {
    fenced(
        "test_calc.py",
        "import unittest\n\nimport calc\n\n\nclass TestCalc(unittest.TestCase):\n    def test_add(self):\n        self.assertEqual(calc.add(1, 2), 3)",
    )
}

/// Model answers for the whole calculator session: draft, design, code,
/// unit test; then, after a manual bug report, the fix and its new test.
pub fn answers() -> Vec<String> {
    vec![
        "```json\n{\"1\": \"User can enter two numbers.\", \"2\": \"User can see the sum.\", \"3\": \"User can clear the input.\"}\n```".into(),
        "{\"main.py\": \"Starts the calculator.\", \"calc.py\": \"Arithmetic.\"}".into(),
        format!(
            "{}\n\n{}",
            fenced("main.py", "import calc\n\nprint(calc.add(1, 2))"),
            fenced("calc.py", "def add(a, b):\n    return a + b")
        ),
        unit_test(),
        fenced("calc.py", "def add(a, b):\n    return float(a) + float(b)"),
        fenced(
            "test_calc.py",
            "import unittest\n\nimport calc\n\n\nclass TestCalc(unittest.TestCase):\n    def test_add(self):\n        self.assertEqual(calc.add('1', 2), 3.0)",
        ),
    ]
}

/// Serves `answers` in order at `/v1/chat/completions` on a background
/// thread. Returns the endpoint URL.
pub fn fake_model(answers: Vec<String>) -> String {
    let queue = Arc::new(Mutex::new(VecDeque::from(answers)));
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let app = Router::new().route("/v1/chat/completions", post(complete)).with_state(queue);
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    format!("http://{addr}/v1/chat/completions")
}

async fn complete(
    State(queue): State<Arc<Mutex<VecDeque<String>>>>,
    Json(body): Json<Value>,
) -> Result<Json<Value>, (axum::http::StatusCode, String)> {
    let answer = queue
        .lock()
        .unwrap()
        .pop_front()
        .ok_or((axum::http::StatusCode::BAD_REQUEST, "no more answers".to_string()))?;
    let prompt: String =
        body["messages"].as_array().into_iter().flatten().filter_map(|m| m["content"].as_str()).collect();
    Ok(Json(completion_body(&answer, estimate_tokens(&prompt), estimate_tokens(&answer))))
}

/// A config file with a deterministic clock and a profile for `endpoint`.
pub fn write_config(dir: &Path, endpoint: &str) -> PathBuf {
    let path = dir.join("caseloop.toml");
    let text = format!(
        r#"default_profile = "fake"

[clock]
mode = "stepping"
start_ms = 1700000000000
step_ms = 1000

[session]
run_timeout_ms = 5000

[profiles.fake]
endpoint = "{endpoint}"
model_name = "fake-model"
api_key_env = "CASELOOP_TEST_NO_KEY"
"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

pub struct Cli {
    pub config: PathBuf,
    pub sessions: PathBuf,
    pub extra: Vec<String>,
}

impl Cli {
    pub fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_caseloop"))
            .arg("--config")
            .arg(&self.config)
            .arg("--sessions-dir")
            .arg(&self.sessions)
            .args(&self.extra)
            .args(args)
            .env_remove("CASELOOP_CONFIG")
            .output()
            .unwrap()
    }

    /// Runs and insists on success; returns stdout.
    pub fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}\n{}",
            String::from_utf8_lossy(&out.stderr),
            String::from_utf8_lossy(&out.stdout)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

pub fn stdout_json(out: &str) -> Value {
    serde_json::from_str(out).unwrap_or_else(|e| panic!("not json ({e}): {out}"))
}

/// Drives the calculator session through the CLI. Returns the session id.
pub fn cli_session(cli: &Cli) -> String {
    let created = stdout_json(&cli.ok(&["--json", "session", "new", TASK]));
    assert_eq!(created["phase"], "TaskIntake");
    let id = created["id"].as_str().unwrap().to_string();

    assert_eq!(stdout_json(&cli.ok(&["--json", "session", "run-auto", &id]))["phase"], "UseCaseReview");
    let refused = cli.run(&["session", "run-auto", &id]);
    assert_eq!(refused.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&refused.stderr);
    assert!(msg.contains("error[IllegalTransition]") && msg.contains("use-case review"), "{msg}");

    cli.ok(&["session", "edit-usecases", &id, "--modify", "3=User can reset the input."]);
    assert_eq!(stdout_json(&cli.ok(&["--json", "session", "approve", &id]))["phase"], "Designing");
    assert_eq!(stdout_json(&cli.ok(&["--json", "session", "run-auto", &id]))["phase"], "ManualValidation");
    let routed = stdout_json(
        &cli.ok(&["--json", "session", "feedback", &id, "--pass", "1,2", "--fail", "3", "--error", CALC_CRASH]),
    );
    assert_eq!(routed["phase"], "BugFixing");
    assert_eq!(routed["route"]["route"], "bug_fix");
    assert_eq!(stdout_json(&cli.ok(&["--json", "session", "run-auto", &id]))["phase"], "ManualValidation");
    let done = stdout_json(&cli.ok(&["--json", "session", "feedback", &id, "--pass", "1,2,3"]));
    assert_eq!(done["phase"], "Completed");
    id
}

/// Records the calculator session against a fresh stand-in model.
/// Returns the cassette path.
pub fn record_cassette(dir: &Path) -> PathBuf {
    let endpoint = fake_model(answers());
    let cassette = dir.join("calc.cassette.jsonl");
    let cli = Cli {
        config: write_config(dir, &endpoint),
        sessions: dir.join("recorded"),
        extra: vec!["--mode".into(), "record".into(), "--cassette".into(), cassette.display().to_string()],
    };
    cli_session(&cli);
    cassette
}

pub fn event_log(sessions: &Path, id: &str) -> Vec<u8> {
    std::fs::read(sessions.join(id).join("events.jsonl")).unwrap()
}
