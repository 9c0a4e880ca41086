//! Materializes bundles on disk and runs generated projects as subprocesses.

mod classify;
mod unittest;

use std::io::Read;
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::parsers::CodeBundle;

pub use classify::{classify_outcome, last_traceback, tail, RunStatus, TRACEBACK_HEADER};
pub use unittest::{parse_verbose, TestFailure, TestReport};

/// Captured output beyond this many bytes per stream keeps only the tail.
const MAX_CAPTURE: usize = 512 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunnerError {
    #[error("file name `{0}` would escape the workspace")]
    PathViolation(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot start `{command}`: {message}")]
    Env { command: String, message: String },
}

impl RunnerError {
    pub fn code(&self) -> &'static str {
        match self {
            RunnerError::PathViolation(_) => "PathViolation",
            RunnerError::Io { .. } => "IoError",
            RunnerError::Env { .. } => "EnvError",
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        RunnerError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunnerConfig {
    /// Program and leading arguments; the entry file is appended.
    pub interpreter_command: String,
    /// `{file}` is replaced by each test file name.
    pub test_command: String,
    pub run_timeout_ms: u64,
    pub test_timeout_ms: u64,
    /// Variables passed through from the parent environment.
    pub env_allowlist: Vec<String>,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            interpreter_command: "python3".into(),
            test_command: "python3 -m unittest -v {file}".into(),
            run_timeout_ms: 10_000,
            test_timeout_ms: 60_000,
            env_allowlist: ["PATH", "LANG", "LC_ALL", "LC_CTYPE", "TZ", "DISPLAY", "XAUTHORITY", "WAYLAND_DISPLAY"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl RunnerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.interpreter_command.split_whitespace().next().is_none() {
            return Err("interpreter_command is empty".into());
        }
        if !self.test_command.contains("{file}") {
            return Err("test_command must contain `{file}`".into());
        }
        if self.run_timeout_ms == 0 || self.test_timeout_ms == 0 {
            return Err("timeouts must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workspace {
    pub root: PathBuf,
    pub session_id: String,
    pub round: u32,
    /// Names of the files written, in bundle order.
    pub files: Vec<String>,
}

impl Workspace {
    pub fn entry_file(&self) -> Option<&str> {
        self.files
            .iter()
            .map(String::as_str)
            .find(|f| Path::new(f).file_stem().and_then(|s| s.to_str()) == Some("main"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub error_excerpt: Option<String>,
    pub duration_ms: u64,
}

/// `<session_dir>/workspace/round-NNN`
pub fn workspace_dir(session_dir: &Path, round: u32) -> PathBuf {
    session_dir.join("workspace").join(format!("round-{round:03}"))
}

fn check_name(name: &str) -> Result<(), RunnerError> {
    let mut components = Path::new(name).components();
    match (components.next(), components.next()) {
        (Some(Component::Normal(_)), None) if !name.contains(['/', '\\']) => Ok(()),
        _ => Err(RunnerError::PathViolation(name.to_string())),
    }
}

/// Writes every file of `bundle` into a fresh round directory.
pub fn materialize(
    bundle: &CodeBundle,
    session_dir: &Path,
    session_id: &str,
    round: u32,
) -> Result<Workspace, RunnerError> {
    for f in &bundle.files {
        check_name(&f.name)?;
    }
    let root = workspace_dir(session_dir, round);
    if root.exists() {
        std::fs::remove_dir_all(&root).map_err(|e| RunnerError::io(&root, e))?;
    }
    std::fs::create_dir_all(&root).map_err(|e| RunnerError::io(&root, e))?;
    for f in &bundle.files {
        let path = root.join(&f.name);
        std::fs::write(&path, f.file_text()).map_err(|e| RunnerError::io(&path, e))?;
    }
    Ok(Workspace {
        root,
        session_id: session_id.to_string(),
        round,
        files: bundle.files.iter().map(|f| f.name.clone()).collect(),
    })
}

/// Executes materialized projects. The subprocess implementation is
/// [`SubprocessRunner`]; tests substitute scripted fakes.
pub trait ProjectRunner: Send + Sync {
    fn materialize(
        &self,
        bundle: &CodeBundle,
        session_dir: &Path,
        session_id: &str,
        round: u32,
    ) -> Result<Workspace, RunnerError> {
        materialize(bundle, session_dir, session_id, round)
    }

    fn run_entry(&self, ws: &Workspace) -> Result<RunOutcome, RunnerError>;

    fn run_tests(&self, ws: &Workspace, test_files: &[String]) -> Result<TestReport, RunnerError>;
}

#[derive(Debug, Clone, Default)]
pub struct SubprocessRunner {
    pub config: RunnerConfig,
}

struct Finished {
    exit_code: Option<i32>,
    stdout: String,
    stderr: String,
    timed_out: bool,
    duration: Duration,
}

impl SubprocessRunner {
    pub fn new(config: RunnerConfig) -> Self {
        Self { config }
    }

    fn spawn(&self, ws: &Workspace, argv: &[String], timeout: Duration) -> Result<Finished, RunnerError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| RunnerError::Env { command: String::new(), message: "empty command".into() })?;
        let mut cmd = Command::new(program);
        cmd.args(args)
            .current_dir(&ws.root)
            .env_clear()
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        for key in &self.config.env_allowlist {
            if let Some(v) = std::env::var_os(key) {
                cmd.env(key, v);
            }
        }
        cmd.env("HOME", &ws.root)
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONUNBUFFERED", "1")
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONNODEBUGRANGES", "1");
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        let started = Instant::now();
        let mut child =
            cmd.spawn().map_err(|e| RunnerError::Env { command: argv.join(" "), message: e.to_string() })?;
        let out = child.stdout.take().map(reader_thread);
        let err = child.stderr.take().map(reader_thread);
        let mut timed_out = false;
        let status = loop {
            match child.try_wait().map_err(|e| RunnerError::io(&ws.root, e))? {
                Some(status) => break status,
                None if started.elapsed() >= timeout => {
                    timed_out = true;
                    kill_group(&mut child);
                    break child.wait().map_err(|e| RunnerError::io(&ws.root, e))?;
                }
                None => std::thread::sleep(Duration::from_millis(10)),
            }
        };
        // a grandchild that escaped the group could hold the pipes open
        kill_group(&mut child);
        let duration = started.elapsed();
        let stdout = out.map(|h| h.join().unwrap_or_default()).unwrap_or_default();
        let stderr = err.map(|h| h.join().unwrap_or_default()).unwrap_or_default();
        Ok(Finished {
            exit_code: status.code(),
            stdout: normalize(&stdout, &ws.root),
            stderr: normalize(&stderr, &ws.root),
            timed_out,
            duration,
        })
    }
}

fn reader_thread<R: Read + Send + 'static>(mut pipe: R) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match pipe.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    buf.extend_from_slice(&chunk[..n]);
                    if buf.len() > 2 * MAX_CAPTURE {
                        buf.drain(..buf.len() - MAX_CAPTURE);
                    }
                }
            }
        }
        if buf.len() > MAX_CAPTURE {
            buf.drain(..buf.len() - MAX_CAPTURE);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

#[cfg(unix)]
fn kill_group(child: &mut std::process::Child) {
    let pid = child.id() as libc::pid_t;
    // SAFETY: signalling a process group we created; failure (already gone) is harmless.
    unsafe {
        libc::killpg(pid, libc::SIGKILL);
    }
}

#[cfg(not(unix))]
fn kill_group(child: &mut std::process::Child) {
    let _ = child.kill();
}

/// Removes the absolute workspace path from captured output so logs and
/// prompts do not depend on where the session lives.
fn normalize(text: &str, root: &Path) -> String {
    let mut out = text.to_string();
    let mut roots = vec![root.to_path_buf()];
    if let Ok(canon) = root.canonicalize() {
        if canon != root {
            roots.push(canon);
        }
    }
    for r in roots {
        let r = r.display().to_string();
        out = out.replace(&format!("{r}/"), "").replace(&r, ".");
    }
    out
}

impl ProjectRunner for SubprocessRunner {
    fn run_entry(&self, ws: &Workspace) -> Result<RunOutcome, RunnerError> {
        let Some(entry) = ws.entry_file() else {
            return Ok(RunOutcome {
                status: RunStatus::NonZeroExit,
                exit_code: None,
                stdout: String::new(),
                stderr: String::new(),
                error_excerpt: Some("the project has no main file to start".into()),
                duration_ms: 0,
            });
        };
        let mut argv: Vec<String> = self.config.interpreter_command.split_whitespace().map(String::from).collect();
        argv.push(entry.to_string());
        let f = self.spawn(ws, &argv, Duration::from_millis(self.config.run_timeout_ms))?;
        let (status, error_excerpt) = classify_outcome(f.exit_code, &f.stdout, &f.stderr, f.timed_out);
        Ok(RunOutcome {
            status,
            exit_code: f.exit_code,
            stdout: f.stdout,
            stderr: f.stderr,
            error_excerpt,
            duration_ms: f.duration.as_millis() as u64,
        })
    }

    fn run_tests(&self, ws: &Workspace, test_files: &[String]) -> Result<TestReport, RunnerError> {
        let mut report = TestReport::default();
        for file in test_files {
            check_name(file)?;
            let argv: Vec<String> =
                self.config.test_command.split_whitespace().map(|a| a.replace("{file}", file)).collect();
            let f = self.spawn(ws, &argv, Duration::from_millis(self.config.test_timeout_ms))?;
            let combined = format!("{}\n{}", f.stderr, f.stdout);
            match parse_verbose(&combined) {
                Some(r) if !f.timed_out => report.merge(r),
                _ => {
                    let message = if f.timed_out {
                        format!("tests in {file} did not finish within {} ms", self.config.test_timeout_ms)
                    } else {
                        let text = if f.stderr.trim().is_empty() { &f.stdout } else { &f.stderr };
                        last_traceback(text).unwrap_or_else(|| tail(text, 20))
                    };
                    report.merge(TestReport {
                        total: 1,
                        passed: 0,
                        failures: vec![TestFailure { test_id: file.clone(), message }],
                    });
                }
            }
        }
        Ok(report)
    }
}
