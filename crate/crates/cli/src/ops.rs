//! The operations both surfaces expose. The HTTP handlers and the CLI
//! subcommands are thin adapters over [`App`], which in turn delegates every
//! state change to the session engine.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use caseloop_core::bench::{self, BenchError, BenchmarkTask, Driven, Harness, VerdictSource};
use caseloop_core::gateway::ChatGateway;
use caseloop_core::parsers::{CodeBundle, DesignFinding, Finding, SystemDesign, UseCaseEdit, UseCaseSet};
use caseloop_core::runner::{workspace_dir, RunnerConfig, SubprocessRunner, TestReport};
use caseloop_core::session::{
    load_state, Candidate, Clock, Counters, FinalReason, ManualFeedback, Phase, Route, RunSummary, Services, Session,
    SessionConfig, SessionError, SessionEvent, SessionState, SteppingClock, SystemClock,
};
use serde::{Deserialize, Serialize};

use crate::config::{AppConfig, ClockConfig};

#[derive(Debug, thiserror::Error)]
pub enum OpError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl OpError {
    pub fn code(&self) -> &'static str {
        match self {
            OpError::Session(e) => e.code(),
            OpError::Bench(e) => e.code(),
            OpError::Config(_) => "ConfigError",
            OpError::NotFound(_) => "NotFound",
            OpError::InvalidInput(_) => "InvalidInput",
            OpError::Io(_) => "IoError",
        }
    }

    pub fn is_client_error(&self) -> bool {
        match self {
            OpError::Session(e) => e.is_client_error(),
            OpError::Bench(e) => e.is_client_error(),
            OpError::NotFound(_) | OpError::InvalidInput(_) => true,
            OpError::Config(_) | OpError::Io(_) => false,
        }
    }

    /// What the human should do next, for errors raised at a gate.
    pub fn hint(&self) -> Option<&'static str> {
        match self {
            OpError::Session(SessionError::IllegalTransition { phase, .. }) => match phase {
                Phase::UseCaseReview => {
                    Some("the session is waiting for use-case review; edit or approve the use cases first")
                }
                Phase::DesignReview => {
                    Some("the session is waiting for design review; edit or approve the design first")
                }
                Phase::ManualValidation => Some("the session is waiting for manual validation; submit feedback first"),
                _ => None,
            },
            _ => None,
        }
    }
}

/// One state change, as requested through either surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    EditUseCases {
        edits: Vec<UseCaseEdit>,
    },
    ApproveUseCases,
    EditDesign {
        design: SystemDesign,
    },
    ApproveDesign,
    /// One automatic step.
    Advance,
    /// Automatic steps until a human gate or the end.
    RunAuto,
    Feedback {
        feedback: ManualFeedback,
    },
    Abort {
        reason: String,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::EditUseCases { .. } => "edit_use_cases",
            Action::ApproveUseCases => "approve_use_cases",
            Action::EditDesign { .. } => "edit_design",
            Action::ApproveDesign => "approve_design",
            Action::Advance => "advance",
            Action::RunAuto => "run_auto",
            Action::Feedback { .. } => "submit_manual_feedback",
            Action::Abort { .. } => "abort",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Route>,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

/// A session snapshot without the raw exchanges and events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub task_prompt: String,
    pub phase: Phase,
    pub config: SessionConfig,
    pub use_cases: Option<UseCaseSet>,
    pub design: Option<SystemDesign>,
    pub design_findings: Vec<DesignFinding>,
    pub bundle: Option<CodeBundle>,
    pub tests: Vec<String>,
    pub findings: Vec<Finding>,
    pub counters: Counters,
    pub h1: u32,
    pub h2: u32,
    pub tokens: TokenTotals,
    pub last_unit_report: Option<TestReport>,
    pub last_system: Option<RunSummary>,
    pub pending_problem: Option<String>,
    pub candidates: Vec<Candidate>,
    pub winner_round: Option<u32>,
    pub final_reason: Option<FinalReason>,
    pub abort_reason: Option<String>,
    pub warnings: Vec<String>,
    pub last_seq: u64,
}

impl From<&SessionState> for SessionView {
    fn from(s: &SessionState) -> Self {
        let usage = caseloop_core::gateway::usage_total(&s.exchanges);
        let (h1, h2) = s.revision_counters();
        Self {
            id: s.id.clone(),
            task_prompt: s.task_prompt.clone(),
            phase: s.phase,
            config: s.config.clone(),
            use_cases: s.use_cases.clone(),
            design: s.design.clone(),
            design_findings: s.design_findings.clone(),
            bundle: s.bundle.clone(),
            tests: s.tests.values().map(|t| t.file.name.clone()).collect(),
            findings: s.findings.clone(),
            counters: s.counters,
            h1,
            h2,
            tokens: TokenTotals {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
                total_tokens: usage.total(),
            },
            last_unit_report: s.last_unit_report.clone(),
            last_system: s.last_system.clone(),
            pending_problem: s.pending_problem.clone(),
            candidates: s.candidates.clone(),
            winner_round: s.winner_round,
            final_reason: s.final_reason,
            abort_reason: s.abort_reason.clone(),
            warnings: s.warnings.clone(),
            last_seq: s.next_seq() - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub task_prompt: String,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub test: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileTree {
    /// Bundle round the files belong to.
    pub round: u32,
    pub files: Vec<FileEntry>,
}

pub struct App {
    pub config: AppConfig,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn io(path: &Path, e: std::io::Error) -> OpError {
    OpError::Io(format!("{}: {e}", path.display()))
}

fn check_plain_name(name: &str, what: &str) -> Result<(), OpError> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && !name.contains(['/', '\\'])
        && name.chars().all(|c| !c.is_control());
    if ok {
        Ok(())
    } else {
        Err(OpError::InvalidInput(format!("bad {what} `{name}`")))
    }
}

impl App {
    pub fn new(config: AppConfig) -> Self {
        Self { config, locks: Mutex::new(HashMap::new()) }
    }

    pub fn sessions_dir(&self) -> &Path {
        &self.config.sessions_dir
    }

    fn clock(&self) -> Arc<dyn Clock> {
        match self.config.clock {
            ClockConfig::System => Arc::new(SystemClock),
            ClockConfig::Stepping { start_ms, step_ms } => Arc::new(SteppingClock::new(start_ms, step_ms)),
        }
    }

    /// Fresh services for one operation.
    pub fn services(&self, runner: &RunnerConfig) -> Arc<Services> {
        Arc::new(Services::new(Arc::new(SubprocessRunner::new(runner.clone())), self.clock()))
    }

    fn session_dir(&self, id: &str) -> Result<PathBuf, OpError> {
        check_plain_name(id, "session id")?;
        let dir = self.config.sessions_dir.join(id);
        if dir.join(caseloop_core::session::store::EVENT_LOG).is_file() {
            Ok(dir)
        } else {
            Err(OpError::NotFound(format!("session `{id}`")))
        }
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().unwrap().entry(id.to_string()).or_default().clone()
    }

    pub fn create(&self, task_prompt: &str, config: Option<SessionConfig>) -> Result<SessionView, OpError> {
        let config = config.unwrap_or_else(|| self.config.session.clone());
        std::fs::create_dir_all(&self.config.sessions_dir).map_err(|e| io(&self.config.sessions_dir, e))?;
        let gateway = ChatGateway::from_profile(config.backend.clone()).map_err(SessionError::from)?;
        let services = self.services(&config.runner);
        let session = Session::create(&self.config.sessions_dir, task_prompt, config, gateway, services)?;
        Ok(SessionView::from(session.state()))
    }

    pub fn state(&self, id: &str) -> Result<SessionState, OpError> {
        Ok(load_state(&self.session_dir(id)?)?)
    }

    pub fn view(&self, id: &str) -> Result<SessionView, OpError> {
        Ok(SessionView::from(&self.state(id)?))
    }

    pub fn list(&self) -> Result<Vec<SessionSummary>, OpError> {
        let root = &self.config.sessions_dir;
        let entries = match std::fs::read_dir(root) {
            Ok(entries) => entries,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io(root, e)),
        };
        let mut out = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| io(root, e))?;
            let Some(id) = entry.file_name().to_str().map(str::to_string) else { continue };
            if let Ok(state) = self.state(&id) {
                out.push(SessionSummary { id, task_prompt: state.task_prompt, phase: state.phase });
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    /// Loads the session, applies `action` through the engine, and lets the
    /// session go again. Commands on one session run one at a time.
    pub fn perform(&self, id: &str, action: Action) -> Result<ActionResult, OpError> {
        let dir = self.session_dir(id)?;
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let state = load_state(&dir)?;
        let gateway = ChatGateway::from_profile(state.config.backend.clone()).map_err(SessionError::from)?;
        let services = self.services(&state.config.runner);
        let mut session = Session::load(&dir, gateway, services)?;
        let mut route = None;
        match action {
            Action::EditUseCases { edits } => session.submit_use_case_edits(edits)?,
            Action::ApproveUseCases => session.approve_use_cases()?,
            Action::EditDesign { design } => session.edit_design(design)?,
            Action::ApproveDesign => session.approve_design()?,
            Action::Advance => {
                session.advance_auto()?;
            }
            Action::RunAuto => {
                let phase = session.phase();
                if phase.is_gate() {
                    return Err(SessionError::IllegalTransition { phase, action: "run_auto".into() }.into());
                }
                if phase.is_terminal() {
                    return Err(SessionError::SessionClosed(phase).into());
                }
                session.run_auto()?;
            }
            Action::Feedback { feedback } => route = Some(session.submit_manual_feedback(feedback)?),
            Action::Abort { reason } => session.abort(&reason)?,
        }
        Ok(ActionResult { phase: session.phase(), route, last_seq: session.state().next_seq() - 1 })
    }

    pub fn events_after(&self, id: &str, after: u64) -> Result<Vec<SessionEvent>, OpError> {
        let state = self.state(id)?;
        Ok(state.events.into_iter().filter(|e| e.seq > after).collect())
    }

    /// Files of the current code round: what is on disk when the round has
    /// been run, else the bundle and its tests as recorded.
    pub fn files(&self, id: &str) -> Result<FileTree, OpError> {
        let dir = self.session_dir(id)?;
        let state = load_state(&dir)?;
        let Some(bundle) = &state.bundle else {
            return Ok(FileTree { round: 0, files: Vec::new() });
        };
        let tests: Vec<&str> = state.tests.values().map(|t| t.file.name.as_str()).collect();
        let ws = workspace_dir(&dir, bundle.round);
        let mut files = Vec::new();
        if ws.is_dir() {
            for entry in std::fs::read_dir(&ws).map_err(|e| io(&ws, e))? {
                let entry = entry.map_err(|e| io(&ws, e))?;
                let meta = entry.metadata().map_err(|e| io(&ws, e))?;
                if let (true, Some(name)) = (meta.is_file(), entry.file_name().to_str()) {
                    files.push(FileEntry {
                        name: name.to_string(),
                        bytes: meta.len() as usize,
                        test: tests.contains(&name),
                    });
                }
            }
        } else {
            files.extend(bundle.files.iter().map(|f| FileEntry {
                name: f.name.clone(),
                bytes: f.body.len(),
                test: false,
            }));
            files.extend(state.tests.values().map(|t| FileEntry {
                name: t.file.name.clone(),
                bytes: t.file.body.len(),
                test: true,
            }));
        }
        files.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(FileTree { round: bundle.round, files })
    }

    pub fn file(&self, id: &str, name: &str) -> Result<String, OpError> {
        check_plain_name(name, "file name")?;
        let dir = self.session_dir(id)?;
        let state = load_state(&dir)?;
        let bundle = state.bundle.as_ref().ok_or_else(|| OpError::NotFound(format!("file `{name}`")))?;
        let path = workspace_dir(&dir, bundle.round).join(name);
        if path.is_file() {
            return std::fs::read_to_string(&path).map_err(|e| io(&path, e));
        }
        bundle
            .get(name)
            .or_else(|| state.tests.values().map(|t| &t.file).find(|f| f.name == name))
            .map(|f| f.body.clone())
            .ok_or_else(|| OpError::NotFound(format!("file `{name}`")))
    }

    pub fn logs(&self, id: &str) -> Result<Vec<String>, OpError> {
        let logs = self.session_dir(id)?.join("logs");
        let mut names = Vec::new();
        if logs.is_dir() {
            for entry in std::fs::read_dir(&logs).map_err(|e| io(&logs, e))? {
                let entry = entry.map_err(|e| io(&logs, e))?;
                if let Some(name) = entry.file_name().to_str() {
                    names.push(name.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }

    pub fn log(&self, id: &str, name: &str) -> Result<String, OpError> {
        check_plain_name(name, "log name")?;
        let path = self.session_dir(id)?.join("logs").join(name);
        if !path.is_file() {
            return Err(OpError::NotFound(format!("log `{name}`")));
        }
        std::fs::read_to_string(&path).map_err(|e| io(&path, e))
    }

    /// Writes the delivered code (the winning candidate once finalized) and
    /// its tests into `out`. Returns the file names written.
    pub fn export(&self, id: &str, out: &Path) -> Result<Vec<String>, OpError> {
        let state = self.state(id)?;
        let bundle = match (state.final_reason, state.winner_round) {
            (Some(FinalReason::BudgetExhausted), Some(round)) => {
                state.candidates.iter().find(|c| c.round == round).map(|c| c.bundle.clone())
            }
            _ => state.bundle.clone(),
        }
        .ok_or_else(|| OpError::InvalidInput(format!("session `{id}` has no code yet")))?;
        std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
        let mut written = BTreeMap::new();
        let files = bundle.files.iter().chain(state.tests.values().map(|t| &t.file));
        for f in files {
            check_plain_name(&f.name, "file name")?;
            let path = out.join(&f.name);
            std::fs::write(&path, &f.body).map_err(|e| io(&path, e))?;
            written.insert(f.name.clone(), ());
        }
        Ok(written.into_keys().collect())
    }

    pub fn bench_tasks(&self, suite: Option<&Path>) -> Result<Vec<BenchmarkTask>, OpError> {
        match suite {
            Some(path) => Ok(bench::load_tasks(path)?),
            None => bench::parse_suite(bench::SAMPLE_SUITE)
                .map_err(|issues| OpError::Config(format!("bundled suite: {issues:?}"))),
        }
    }

    /// Drives one task in a fresh session under
    /// `<sessions_dir>/bench/trial-<trial>`.
    pub fn bench_drive(
        &self,
        task: &BenchmarkTask,
        trial: u32,
        source: &mut dyn VerdictSource,
    ) -> Result<Driven, OpError> {
        let root = self.config.sessions_dir.join("bench").join(format!("trial-{trial}"));
        std::fs::create_dir_all(&root).map_err(|e| io(&root, e))?;
        let config = self.config.session.clone();
        let gateway = ChatGateway::from_profile(config.backend.clone()).map_err(SessionError::from)?;
        let harness = Harness::new(&root, self.services(&config.runner));
        Ok(harness.drive_task(task, config, gateway, source)?)
    }
}
