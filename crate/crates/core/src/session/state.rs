use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::feedback::{route_feedback, ManualFeedback, Route};
use super::SessionConfig;
use crate::gateway::{ChatExchange, GatewayError};
use crate::parsers::{CodeBundle, CodeFile, DesignFinding, EditError, Finding, SystemDesign, UseCaseEdit, UseCaseSet};
use crate::prompts::PromptError;
use crate::runner::{RunOutcome, RunStatus, RunnerError, TestReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    TaskIntake,
    UseCaseReview,
    Designing,
    DesignReview,
    Coding,
    Refining,
    UnitTesting,
    SystemTesting,
    ManualValidation,
    BugFixing,
    Completed,
    Aborted,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Completed | Phase::Aborted)
    }

    /// Phases that wait for a person.
    pub fn is_gate(self) -> bool {
        matches!(self, Phase::UseCaseReview | Phase::DesignReview | Phase::ManualValidation)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::TaskIntake => "TaskIntake",
            Phase::UseCaseReview => "UseCaseReview",
            Phase::Designing => "Designing",
            Phase::DesignReview => "DesignReview",
            Phase::Coding => "Coding",
            Phase::Refining => "Refining",
            Phase::UnitTesting => "UnitTesting",
            Phase::SystemTesting => "SystemTesting",
            Phase::ManualValidation => "ManualValidation",
            Phase::BugFixing => "BugFixing",
            Phase::Completed => "Completed",
            Phase::Aborted => "Aborted",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// 1 once any edit batch was accepted at use-case review.
    pub h1: u32,
    /// Manual-phase interventions: bug-fix requests and use-case revisions.
    pub h2: u32,
    /// Fix rounds in the current unit-test loop.
    pub unit_iters: u32,
    /// Fix rounds in the current system-test loop.
    pub system_iters: u32,
    pub manual_rounds: u32,
    /// Test runs in the current unit-test loop.
    pub unit_runs: u32,
    /// Start attempts in the current system-test loop.
    pub system_runs: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleOrigin {
    Codegen,
    ManualFix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStage {
    Unit,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalReason {
    AllPassed,
    BudgetExhausted,
}

/// A unit-test file and the digest of the source file it was written for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedTest {
    pub target: String,
    pub target_digest: String,
    pub file: CodeFile,
}

/// One bug-fix completion inside an automatic loop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixRound {
    pub problem: String,
    /// The merged bundle, absent when the response could not be used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<CodeBundle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The reproducible part of a [`RunOutcome`]; raw output goes to log files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub exit_code: Option<i32>,
    pub error_excerpt: Option<String>,
}

impl From<&RunOutcome> for RunSummary {
    fn from(o: &RunOutcome) -> Self {
        Self { status: o.status, exit_code: o.exit_code, error_excerpt: o.error_excerpt.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub round: u32,
    pub bundle: CodeBundle,
    pub passes: usize,
    pub clean_start: bool,
    pub findings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    TaskSubmitted {
        session_id: String,
        task_prompt: String,
        config: SessionConfig,
    },
    UseCasesDrafted {
        use_cases: UseCaseSet,
        exchanges: Vec<ChatExchange>,
    },
    UseCasesEdited {
        edits: Vec<UseCaseEdit>,
    },
    UseCasesApproved,
    DesignProduced {
        design: SystemDesign,
        findings: Vec<DesignFinding>,
        exchanges: Vec<ChatExchange>,
    },
    DesignEdited {
        design: SystemDesign,
    },
    DesignApproved,
    BundleProduced {
        bundle: CodeBundle,
        origin: BundleOrigin,
        warnings: Vec<String>,
        exchanges: Vec<ChatExchange>,
    },
    RefinementApplied {
        findings: Vec<Finding>,
        bundle: Option<CodeBundle>,
        warning: Option<String>,
        exchanges: Vec<ChatExchange>,
    },
    UnitTestRound {
        run: u32,
        /// Tests written or rewritten this round.
        tests: Vec<GeneratedTest>,
        /// Targets whose tests were discarded.
        dropped_tests: Vec<String>,
        report: TestReport,
        fix: Option<FixRound>,
        warnings: Vec<String>,
        exchanges: Vec<ChatExchange>,
    },
    SystemTestRound {
        run: u32,
        outcome: RunSummary,
        fix: Option<FixRound>,
        exchanges: Vec<ChatExchange>,
    },
    AutoLoopExhausted {
        stage: LoopStage,
        summary: String,
    },
    ManualVerdict {
        feedback: ManualFeedback,
        /// Pre-test findings on the validated bundle, for best-of ranking.
        findings: usize,
    },
    BugfixRequested {
        problem: String,
    },
    UseCaseRevisionRequested {
        edits: Vec<UseCaseEdit>,
    },
    NewUseCasesAdded {
        descriptions: Vec<String>,
    },
    Finalized {
        reason: FinalReason,
        winner_round: u32,
    },
    Aborted {
        reason: String,
        /// Calls made by the step that gave up.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        exchanges: Vec<ChatExchange>,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::TaskSubmitted { .. } => "TaskSubmitted",
            EventKind::UseCasesDrafted { .. } => "UseCasesDrafted",
            EventKind::UseCasesEdited { .. } => "UseCasesEdited",
            EventKind::UseCasesApproved => "UseCasesApproved",
            EventKind::DesignProduced { .. } => "DesignProduced",
            EventKind::DesignEdited { .. } => "DesignEdited",
            EventKind::DesignApproved => "DesignApproved",
            EventKind::BundleProduced { .. } => "BundleProduced",
            EventKind::RefinementApplied { .. } => "RefinementApplied",
            EventKind::UnitTestRound { .. } => "UnitTestRound",
            EventKind::SystemTestRound { .. } => "SystemTestRound",
            EventKind::AutoLoopExhausted { .. } => "AutoLoopExhausted",
            EventKind::ManualVerdict { .. } => "ManualVerdict",
            EventKind::BugfixRequested { .. } => "BugfixRequested",
            EventKind::UseCaseRevisionRequested { .. } => "UseCaseRevisionRequested",
            EventKind::NewUseCasesAdded { .. } => "NewUseCasesAdded",
            EventKind::Finalized { .. } => "Finalized",
            EventKind::Aborted { .. } => "Aborted",
        }
    }

    pub fn exchanges(&self) -> &[ChatExchange] {
        match self {
            EventKind::UseCasesDrafted { exchanges, .. }
            | EventKind::DesignProduced { exchanges, .. }
            | EventKind::BundleProduced { exchanges, .. }
            | EventKind::RefinementApplied { exchanges, .. }
            | EventKind::UnitTestRound { exchanges, .. }
            | EventKind::SystemTestRound { exchanges, .. }
            | EventKind::Aborted { exchanges, .. } => exchanges,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvent", into = "RawEvent")]
pub struct SessionEvent {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub kind: EventKind,
}

/// Wire form `{"seq", "timestamp_ms", "kind", "payload"}`. Going through a
/// `Value` instead of `#[serde(flatten)]` keeps integer map keys readable.
#[derive(Serialize, Deserialize)]
struct RawEvent {
    seq: u64,
    timestamp_ms: u64,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<serde_json::Value>,
}

impl From<SessionEvent> for RawEvent {
    fn from(e: SessionEvent) -> Self {
        let mut tagged = serde_json::to_value(&e.kind).unwrap_or_default();
        let payload = tagged.as_object_mut().and_then(|o| o.remove("payload"));
        RawEvent { seq: e.seq, timestamp_ms: e.timestamp_ms, kind: e.kind.name().to_string(), payload }
    }
}

impl TryFrom<RawEvent> for SessionEvent {
    type Error = serde_json::Error;

    fn try_from(raw: RawEvent) -> Result<Self, Self::Error> {
        let mut tagged = serde_json::Map::new();
        tagged.insert("kind".into(), raw.kind.into());
        if let Some(p) = raw.payload {
            tagged.insert("payload".into(), p);
        }
        let kind = serde_json::from_value(tagged.into())?;
        Ok(SessionEvent { seq: raw.seq, timestamp_ms: raw.timestamp_ms, kind })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("`{action}` is not allowed in phase {phase}")]
    IllegalTransition { phase: Phase, action: String },
    #[error("invalid edit: {0}")]
    InvalidEdit(#[from] EditError),
    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),
    #[error("session is {0}; no further changes are accepted")]
    SessionClosed(Phase),
    #[error("use-case draft failed: {0}")]
    DraftFailed(String),
    #[error("inconsistent event: {0}")]
    InvalidEvent(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Runner(#[from] RunnerError),
    #[error(transparent)]
    Load(#[from] super::store::LoadError),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("session `{0}` not found")]
    NotFound(String),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::InvalidInput(_) => "InvalidInput",
            SessionError::IllegalTransition { .. } => "IllegalTransition",
            SessionError::InvalidEdit(_) => "InvalidEdit",
            SessionError::InvalidFeedback(_) => "InvalidFeedback",
            SessionError::SessionClosed(_) => "SessionClosed",
            SessionError::DraftFailed(_) => "DraftFailed",
            SessionError::InvalidEvent(_) => "InvalidEvent",
            SessionError::Gateway(e) => e.code(),
            SessionError::Prompt(e) => e.code(),
            SessionError::Runner(e) => e.code(),
            SessionError::Load(_) => "LoadError",
            SessionError::Io(_) => "IoError",
            SessionError::NotFound(_) => "NotFound",
        }
    }

    /// Caller mistakes, as opposed to failures of the system.
    pub fn is_client_error(&self) -> bool {
        matches!(
            self,
            SessionError::InvalidInput(_)
                | SessionError::IllegalTransition { .. }
                | SessionError::InvalidEdit(_)
                | SessionError::InvalidFeedback(_)
                | SessionError::SessionClosed(_)
                | SessionError::NotFound(_)
        )
    }
}

fn illegal(phase: Phase, action: &str) -> SessionError {
    SessionError::IllegalTransition { phase, action: action.to_string() }
}

fn bad(msg: impl Into<String>) -> SessionError {
    SessionError::InvalidEvent(msg.into())
}

/// Everything known about a session; a pure fold over its events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub task_prompt: String,
    pub config: SessionConfig,
    pub phase: Phase,
    pub use_cases: Option<UseCaseSet>,
    pub design: Option<SystemDesign>,
    pub design_findings: Vec<DesignFinding>,
    pub bundle: Option<CodeBundle>,
    pub tests: BTreeMap<String, GeneratedTest>,
    pub findings: Vec<Finding>,
    pub counters: Counters,
    pub exchanges: Vec<ChatExchange>,
    pub events: Vec<SessionEvent>,
    pub candidates: Vec<Candidate>,
    pub last_unit_report: Option<TestReport>,
    pub last_system: Option<RunSummary>,
    /// Problem text waiting for the manual bug-fix step.
    pub pending_problem: Option<String>,
    /// Route of a recorded verdict whose routing event has not arrived yet.
    pub pending_route: Option<Route>,
    pub winner_round: Option<u32>,
    pub final_reason: Option<FinalReason>,
    pub abort_reason: Option<String>,
    pub warnings: Vec<String>,
}

impl SessionState {
    /// Rebuilds a session from its log.
    pub fn from_events(events: impl IntoIterator<Item = SessionEvent>) -> Result<Self, SessionError> {
        let mut iter = events.into_iter();
        let first = iter.next().ok_or_else(|| bad("event log is empty"))?;
        let mut state = Self::genesis(first)?;
        for event in iter {
            state.apply(event)?;
        }
        Ok(state)
    }

    pub fn genesis(event: SessionEvent) -> Result<Self, SessionError> {
        if event.seq != 1 {
            return Err(bad(format!("first event has seq {}", event.seq)));
        }
        let EventKind::TaskSubmitted { session_id, task_prompt, config } = &event.kind else {
            return Err(bad("log does not start with TaskSubmitted"));
        };
        if task_prompt.trim().is_empty() {
            return Err(SessionError::InvalidInput("task prompt is empty".into()));
        }
        config.validate().map_err(SessionError::InvalidInput)?;
        Ok(Self {
            id: session_id.clone(),
            task_prompt: task_prompt.clone(),
            config: config.clone(),
            phase: Phase::TaskIntake,
            use_cases: None,
            design: None,
            design_findings: Vec::new(),
            bundle: None,
            tests: BTreeMap::new(),
            findings: Vec::new(),
            counters: Counters::default(),
            exchanges: Vec::new(),
            events: vec![event],
            candidates: Vec::new(),
            last_unit_report: None,
            last_system: None,
            pending_problem: None,
            pending_route: None,
            winner_round: None,
            final_reason: None,
            abort_reason: None,
            warnings: Vec::new(),
        })
    }

    pub fn next_seq(&self) -> u64 {
        self.events.len() as u64 + 1
    }

    /// Highest bundle round seen so far.
    pub fn last_round(&self) -> u32 {
        let current = self.bundle.as_ref().map_or(0, |b| b.round);
        self.candidates.iter().map(|c| c.round).max().unwrap_or(0).max(current)
    }

    pub fn revision_counters(&self) -> (u32, u32) {
        (self.counters.h1, self.counters.h2)
    }

    pub fn total_revisions(&self) -> u32 {
        self.counters.h1 + self.counters.h2
    }

    /// Candidate ranked first by (passes, clean start, fewest findings),
    /// later rounds winning ties.
    pub fn best_candidate(&self) -> Option<&Candidate> {
        self.candidates
            .iter()
            .enumerate()
            .max_by_key(|(i, c)| (c.passes, c.clean_start, std::cmp::Reverse(c.findings), c.round, *i))
            .map(|(_, c)| c)
    }

    fn expect_phase(&self, phase: Phase, action: &str) -> Result<(), SessionError> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(illegal(self.phase, action))
        }
    }

    fn take_newer_bundle(&mut self, bundle: &CodeBundle) -> Result<(), SessionError> {
        if bundle.round <= self.last_round() {
            return Err(bad(format!("bundle round {} does not advance past {}", bundle.round, self.last_round())));
        }
        bundle.validate().map_err(bad)?;
        self.bundle = Some(bundle.clone());
        Ok(())
    }

    fn apply_fix(&mut self, fix: &FixRound) -> Result<(), SessionError> {
        if let Some(b) = &fix.bundle {
            self.take_newer_bundle(b)?;
        }
        if let Some(e) = &fix.error {
            self.warnings.push(e.clone());
        }
        Ok(())
    }

    /// Validates `event` against the current state and folds it in. The
    /// state is unchanged on error.
    pub fn apply(&mut self, event: SessionEvent) -> Result<(), SessionError> {
        if self.phase.is_terminal() {
            return Err(SessionError::SessionClosed(self.phase));
        }
        if event.seq != self.next_seq() {
            return Err(bad(format!("expected seq {}, got {}", self.next_seq(), event.seq)));
        }
        let mut next = self.clone();
        next.fold(&event.kind)?;
        next.exchanges.extend_from_slice(event.kind.exchanges());
        next.events.push(event);
        *self = next;
        Ok(())
    }

    fn fold(&mut self, kind: &EventKind) -> Result<(), SessionError> {
        let name = kind.name();
        if self.pending_route.is_some()
            && !matches!(
                kind,
                EventKind::BugfixRequested { .. }
                    | EventKind::UseCaseRevisionRequested { .. }
                    | EventKind::NewUseCasesAdded { .. }
                    | EventKind::Finalized { .. }
                    | EventKind::Aborted { .. }
            )
        {
            return Err(illegal(self.phase, name));
        }
        let max_auto = self.config.max_auto_iterations;
        match kind {
            EventKind::TaskSubmitted { .. } => return Err(illegal(self.phase, name)),
            EventKind::UseCasesDrafted { use_cases, .. } => {
                self.expect_phase(Phase::TaskIntake, name)?;
                if use_cases.is_empty() {
                    return Err(bad("drafted use cases are empty"));
                }
                self.use_cases = Some(use_cases.clone());
                self.phase = Phase::UseCaseReview;
            }
            EventKind::UseCasesEdited { edits } => {
                self.expect_phase(Phase::UseCaseReview, name)?;
                if edits.is_empty() {
                    return Err(bad("empty edit batch"));
                }
                let current = self.use_cases.as_ref().ok_or_else(|| bad("no use cases"))?;
                self.use_cases = Some(current.apply_edits(edits)?);
                self.counters.h1 = 1;
            }
            EventKind::UseCasesApproved => {
                self.expect_phase(Phase::UseCaseReview, name)?;
                if self.use_cases.as_ref().is_none_or(|u| u.is_empty()) {
                    return Err(SessionError::InvalidInput("no use cases to approve".into()));
                }
                self.phase = Phase::Designing;
            }
            EventKind::DesignProduced { design, findings, .. } => {
                self.expect_phase(Phase::Designing, name)?;
                design.validate().map_err(bad)?;
                self.design = Some(design.clone());
                self.design_findings = findings.clone();
                self.phase = if self.config.design_review_enabled { Phase::DesignReview } else { Phase::Coding };
            }
            EventKind::DesignEdited { design } => {
                self.expect_phase(Phase::DesignReview, name)?;
                design.validate().map_err(SessionError::InvalidInput)?;
                self.design = Some(design.clone());
            }
            EventKind::DesignApproved => {
                self.expect_phase(Phase::DesignReview, name)?;
                self.phase = Phase::Coding;
            }
            EventKind::BundleProduced { bundle, origin, warnings, .. } => {
                match origin {
                    BundleOrigin::Codegen => {
                        self.expect_phase(Phase::Coding, name)?;
                        self.tests.clear();
                        self.phase = Phase::Refining;
                    }
                    BundleOrigin::ManualFix => {
                        self.expect_phase(Phase::BugFixing, name)?;
                        self.pending_problem = None;
                        self.phase = Phase::UnitTesting;
                    }
                }
                self.take_newer_bundle(bundle)?;
                self.warnings.extend(warnings.iter().cloned());
                self.findings.clear();
                let c = &mut self.counters;
                (c.unit_iters, c.system_iters, c.unit_runs, c.system_runs) = (0, 0, 0, 0);
            }
            EventKind::RefinementApplied { findings, bundle, warning, .. } => {
                self.expect_phase(Phase::Refining, name)?;
                if let Some(b) = bundle {
                    self.take_newer_bundle(b)?;
                }
                self.findings = findings.clone();
                self.warnings.extend(warning.iter().cloned());
                self.phase = Phase::UnitTesting;
            }
            EventKind::UnitTestRound { run, tests, dropped_tests, report, fix, warnings, .. } => {
                self.expect_phase(Phase::UnitTesting, name)?;
                if *run != self.counters.unit_runs + 1 {
                    return Err(bad(format!("unit run {run} out of order")));
                }
                if report.passed > report.total {
                    return Err(bad("more tests passed than ran"));
                }
                for t in dropped_tests {
                    self.tests.remove(t);
                }
                for t in tests {
                    self.tests.insert(t.target.clone(), t.clone());
                }
                self.counters.unit_runs += 1;
                self.last_unit_report = Some(report.clone());
                self.warnings.extend(warnings.iter().cloned());
                match (report.all_passed(), fix) {
                    (true, None) => self.phase = Phase::SystemTesting,
                    (false, Some(fix)) => {
                        if self.counters.unit_iters >= max_auto {
                            return Err(bad("unit fix budget already spent"));
                        }
                        self.apply_fix(fix)?;
                        self.counters.unit_iters += 1;
                    }
                    (true, Some(_)) => return Err(bad("fix recorded for a passing unit run")),
                    (false, None) => return Err(bad("failing unit run without a fix round")),
                }
            }
            EventKind::SystemTestRound { run, outcome, fix, .. } => {
                self.expect_phase(Phase::SystemTesting, name)?;
                if *run != self.counters.system_runs + 1 {
                    return Err(bad(format!("system run {run} out of order")));
                }
                self.counters.system_runs += 1;
                self.last_system = Some(outcome.clone());
                match (outcome.status.is_clean(), fix) {
                    (true, None) => self.phase = Phase::ManualValidation,
                    (false, Some(fix)) => {
                        if self.counters.system_iters >= max_auto {
                            return Err(bad("system fix budget already spent"));
                        }
                        self.apply_fix(fix)?;
                        self.counters.system_iters += 1;
                    }
                    (true, Some(_)) => return Err(bad("fix recorded for a clean start")),
                    (false, None) => return Err(bad("failed start without a fix round")),
                }
            }
            EventKind::AutoLoopExhausted { stage, .. } => match stage {
                LoopStage::Unit => {
                    self.expect_phase(Phase::UnitTesting, name)?;
                    if self.counters.unit_iters < max_auto {
                        return Err(bad("unit loop still has fix rounds"));
                    }
                    self.phase = Phase::SystemTesting;
                }
                LoopStage::System => {
                    self.expect_phase(Phase::SystemTesting, name)?;
                    if self.counters.system_iters < max_auto {
                        return Err(bad("system loop still has fix rounds"));
                    }
                    self.phase = Phase::ManualValidation;
                }
            },
            EventKind::ManualVerdict { feedback, findings } => {
                self.expect_phase(Phase::ManualValidation, name)?;
                let use_cases = self.use_cases.as_ref().ok_or_else(|| bad("no use cases"))?;
                feedback.validate(use_cases).map_err(SessionError::InvalidFeedback)?;
                let route =
                    route_feedback(feedback, use_cases, self.counters.manual_rounds, self.config.max_manual_rounds);
                let bundle = self.bundle.clone().ok_or_else(|| bad("no bundle under validation"))?;
                let clean_start = self.last_system.as_ref().is_some_and(|s| s.status.is_clean());
                self.candidates.push(Candidate {
                    round: bundle.round,
                    bundle,
                    passes: feedback.passes(),
                    clean_start,
                    findings: *findings,
                });
                self.pending_route = Some(route);
            }
            EventKind::BugfixRequested { problem } => {
                match self.pending_route.take() {
                    Some(Route::BugFix { problem: expected }) if expected == *problem => {}
                    _ => return Err(illegal(self.phase, name)),
                }
                self.counters.h2 += 1;
                self.counters.manual_rounds += 1;
                self.pending_problem = Some(problem.clone());
                self.phase = Phase::BugFixing;
            }
            EventKind::UseCaseRevisionRequested { edits } => {
                self.redesign(name, edits)?;
            }
            EventKind::NewUseCasesAdded { descriptions } => {
                let edits: Vec<UseCaseEdit> =
                    descriptions.iter().map(|d| UseCaseEdit::Add { description: d.clone() }).collect();
                self.redesign(name, &edits)?;
            }
            EventKind::Finalized { reason, winner_round } => {
                let expected = match (reason, self.pending_route.take()) {
                    (FinalReason::AllPassed, Some(Route::Complete)) => self.bundle.as_ref().map(|b| b.round),
                    (FinalReason::BudgetExhausted, Some(Route::BudgetExhausted)) => {
                        self.best_candidate().map(|c| c.round)
                    }
                    _ => return Err(illegal(self.phase, name)),
                };
                if expected != Some(*winner_round) {
                    return Err(bad(format!("winner round {winner_round} is not the selected candidate")));
                }
                let winner = self
                    .candidates
                    .iter()
                    .rev()
                    .find(|c| c.round == *winner_round)
                    .ok_or_else(|| bad("winner is not a candidate"))?;
                self.bundle = Some(winner.bundle.clone());
                self.winner_round = Some(*winner_round);
                self.final_reason = Some(*reason);
                self.phase = Phase::Completed;
            }
            EventKind::Aborted { reason, .. } => {
                self.pending_route = None;
                self.abort_reason = Some(reason.clone());
                self.phase = Phase::Aborted;
            }
        }
        Ok(())
    }

    fn redesign(&mut self, name: &str, edits: &[UseCaseEdit]) -> Result<(), SessionError> {
        match self.pending_route.take() {
            Some(Route::Redesign { edits: expected }) if expected == edits => {}
            _ => return Err(illegal(self.phase, name)),
        }
        let current = self.use_cases.as_ref().ok_or_else(|| bad("no use cases"))?;
        self.use_cases = Some(current.apply_edits(edits)?);
        self.counters.h2 += 1;
        self.counters.manual_rounds += 1;
        self.design = None;
        self.design_findings.clear();
        self.tests.clear();
        self.phase = Phase::Designing;
        Ok(())
    }
}
