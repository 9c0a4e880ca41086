use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::clock::Clock;
use super::feedback::{ManualFeedback, Route};
use super::state::{BundleOrigin, EventKind, FinalReason, LoopStage, Phase, SessionError, SessionEvent, SessionState};
use super::store::{load_state, EventStore};
use super::SessionConfig;
use crate::autotest::{self, ask, LoopOutcome, StepContext};
use crate::gateway::{usage_total, ChatGateway, TokenUsage};
use crate::parsers::{
    detect_placeholders, parse_code_bundle_first_wins, parse_design, parse_use_cases, CodeBundle, KnownModules,
    SystemDesign, UseCaseEdit,
};
use crate::prompts::PromptLibrary;
use crate::runner::ProjectRunner;

/// Collaborators shared by every session of a process.
pub struct Services {
    pub prompts: PromptLibrary,
    pub runner: Arc<dyn ProjectRunner>,
    pub known: KnownModules,
    pub clock: Arc<dyn Clock>,
}

impl Services {
    /// Built-in templates and module list.
    pub fn new(runner: Arc<dyn ProjectRunner>, clock: Arc<dyn Clock>) -> Self {
        Self { prompts: PromptLibrary::builtin(), runner, known: KnownModules::builtin_python(), clock }
    }
}

/// Stable id derived from the task text and creation time.
pub fn session_id_for(task_prompt: &str, created_ms: u64) -> String {
    let mut h = Sha256::new();
    h.update(task_prompt.as_bytes());
    h.update(b"\n");
    h.update(created_ms.to_string().as_bytes());
    format!("s-{}", &hex::encode(h.finalize())[..12])
}

/// A live session: state, its log on disk, and the gateway it talks through.
/// Commands take `&mut self`, so one writer per session is enforced by the
/// borrow checker (or by a lock in the service).
pub struct Session {
    state: SessionState,
    gateway: ChatGateway,
    services: Arc<Services>,
    dir: PathBuf,
    store: EventStore,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.state.id)
            .field("phase", &self.state.phase)
            .field("dir", &self.dir)
            .finish_non_exhaustive()
    }
}

impl Session {
    /// Starts a session under `sessions_root/<id>`.
    pub fn create(
        sessions_root: &Path,
        task_prompt: &str,
        config: SessionConfig,
        gateway: ChatGateway,
        services: Arc<Services>,
    ) -> Result<Self, SessionError> {
        if task_prompt.trim().is_empty() {
            return Err(SessionError::InvalidInput("task prompt is empty".into()));
        }
        config.validate().map_err(SessionError::InvalidInput)?;
        let now = services.clock.now_ms();
        let id = session_id_for(task_prompt, now);
        let dir = sessions_root.join(&id);
        let event = SessionEvent {
            seq: 1,
            timestamp_ms: now,
            kind: EventKind::TaskSubmitted { session_id: id.clone(), task_prompt: task_prompt.to_string(), config },
        };
        let state = SessionState::genesis(event.clone())?;
        let mut store = EventStore::create(&dir, &id)?;
        store.append(&event)?;
        Ok(Self { state, gateway, services, dir, store })
    }

    /// Rebuilds a session from `dir` and fast-forwards the gateway past the
    /// exchanges already recorded.
    pub fn load(dir: &Path, mut gateway: ChatGateway, services: Arc<Services>) -> Result<Self, SessionError> {
        let state = load_state(dir)?;
        gateway.resume(&state.exchanges)?;
        let store = EventStore::open(dir)?;
        let mut session = Self { state, gateway, services, dir: dir.to_path_buf(), store };
        // a verdict recorded just before a crash still needs its routing event
        if session.state.pending_route.is_some() {
            session.finish_route()?;
        }
        Ok(session)
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn id(&self) -> &str {
        &self.state.id
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.state.events
    }

    pub fn revision_counters(&self) -> (u32, u32) {
        self.state.revision_counters()
    }

    pub fn token_usage(&self) -> TokenUsage {
        usage_total(&self.state.exchanges)
    }

    fn emit(&mut self, kind: EventKind) -> Result<(), SessionError> {
        let event = SessionEvent { seq: self.state.next_seq(), timestamp_ms: self.services.clock.now_ms(), kind };
        let mut next = self.state.clone();
        next.apply(event.clone())?;
        self.store.append(&event)?;
        self.state = next;
        Ok(())
    }

    fn require(&self, phase: Phase, action: &str) -> Result<(), SessionError> {
        if self.state.phase.is_terminal() {
            return Err(SessionError::SessionClosed(self.state.phase));
        }
        if self.state.phase != phase {
            return Err(SessionError::IllegalTransition { phase: self.state.phase, action: action.to_string() });
        }
        Ok(())
    }

    /// Records an abort for a generation step that failed twice and returns
    /// the matching error.
    fn give_up(&mut self, what: &str, error: String, exchanges: Vec<crate::gateway::ChatExchange>) -> SessionError {
        let reason = format!("{what} failed: {error}");
        if let Err(e) = self.emit(EventKind::Aborted { reason: reason.clone(), exchanges }) {
            return e;
        }
        SessionError::DraftFailed(reason)
    }

    pub fn draft_use_cases(&mut self) -> Result<(), SessionError> {
        self.require(Phase::TaskIntake, "draft_use_cases")?;
        let services = self.services.clone();
        let pair = services.prompts.render_use_case_prompt(&self.state.task_prompt)?;
        let generated =
            ask(&mut self.gateway, &services.prompts, &pair, |t| parse_use_cases(t).map_err(|e| e.to_string()))
                .map_err(|(e, _)| SessionError::from(e))?;
        match generated.value {
            Ok(use_cases) => self.emit(EventKind::UseCasesDrafted { use_cases, exchanges: generated.exchanges }),
            Err(e) => Err(self.give_up("use-case draft", e, generated.exchanges)),
        }
    }

    /// An empty batch is accepted and changes nothing.
    pub fn submit_use_case_edits(&mut self, edits: Vec<UseCaseEdit>) -> Result<(), SessionError> {
        self.require(Phase::UseCaseReview, "submit_use_case_edits")?;
        if edits.is_empty() {
            return Ok(());
        }
        self.emit(EventKind::UseCasesEdited { edits })
    }

    pub fn approve_use_cases(&mut self) -> Result<(), SessionError> {
        self.require(Phase::UseCaseReview, "approve_use_cases")?;
        self.emit(EventKind::UseCasesApproved)
    }

    pub fn produce_design(&mut self) -> Result<(), SessionError> {
        self.require(Phase::Designing, "produce_design")?;
        let services = self.services.clone();
        let use_cases = self.state.use_cases.clone().unwrap_or_default();
        let pair = services.prompts.render_design_prompt(&self.state.task_prompt, &use_cases)?;
        let generated = ask(&mut self.gateway, &services.prompts, &pair, |t| {
            let parsed = parse_design(t).map_err(|e| e.to_string())?;
            parsed.design.validate()?;
            Ok(parsed)
        })
        .map_err(|(e, _)| SessionError::from(e))?;
        match generated.value {
            Ok(parsed) => self.emit(EventKind::DesignProduced {
                design: parsed.design,
                findings: parsed.findings,
                exchanges: generated.exchanges,
            }),
            Err(e) => Err(self.give_up("system design", e, generated.exchanges)),
        }
    }

    pub fn edit_design(&mut self, design: SystemDesign) -> Result<(), SessionError> {
        self.require(Phase::DesignReview, "edit_design")?;
        self.emit(EventKind::DesignEdited { design })
    }

    pub fn approve_design(&mut self) -> Result<(), SessionError> {
        self.require(Phase::DesignReview, "approve_design")?;
        self.emit(EventKind::DesignApproved)
    }

    fn generate_code(&mut self) -> Result<(), SessionError> {
        let services = self.services.clone();
        let state = &self.state;
        let use_cases = state.use_cases.clone().unwrap_or_default();
        let design = state.design.clone().unwrap_or_default();
        let pair =
            services.prompts.render_codegen_prompt(&state.task_prompt, &use_cases, &design, &state.config.codegen)?;
        let generated = ask(&mut self.gateway, &services.prompts, &pair, |t| {
            let (bundle, dups) = parse_code_bundle_first_wins(t).map_err(|e| e.to_string())?;
            bundle.validate()?;
            Ok((bundle, dups))
        })
        .map_err(|(e, _)| SessionError::from(e))?;
        match generated.value {
            Ok((bundle, dups)) => {
                let warnings =
                    dups.iter().map(|d| format!("`{d}` appeared more than once; the first copy was kept")).collect();
                let bundle = CodeBundle { round: self.state.last_round() + 1, ..bundle };
                self.emit(EventKind::BundleProduced {
                    bundle,
                    origin: BundleOrigin::Codegen,
                    warnings,
                    exchanges: generated.exchanges,
                })
            }
            Err(e) => Err(self.give_up("code generation", e, generated.exchanges)),
        }
    }

    /// Runs one automatic step and returns the phase it left the session in.
    pub fn advance_auto(&mut self) -> Result<Phase, SessionError> {
        let phase = self.state.phase;
        if phase.is_terminal() {
            return Err(SessionError::SessionClosed(phase));
        }
        match phase {
            Phase::TaskIntake => self.draft_use_cases()?,
            Phase::Designing => self.produce_design()?,
            Phase::Coding => self.generate_code()?,
            Phase::Refining | Phase::UnitTesting | Phase::SystemTesting | Phase::BugFixing => self.test_step()?,
            _ => {
                return Err(SessionError::IllegalTransition { phase, action: "advance_auto".into() });
            }
        }
        Ok(self.state.phase)
    }

    fn test_step(&mut self) -> Result<(), SessionError> {
        let services = self.services.clone();
        let state = &self.state;
        let bundle = state.bundle.clone().ok_or_else(|| SessionError::InvalidEvent("no bundle".into()))?;
        let next_round = state.last_round() + 1;
        let max = state.config.max_auto_iterations;
        let log_stem = format!("{:04}-system", state.next_seq());
        let mut ctx = StepContext {
            gateway: &mut self.gateway,
            prompts: &services.prompts,
            runner: services.runner.as_ref(),
            known: &services.known,
            session_dir: &self.dir,
            session_id: &state.id,
        };
        let kind = match state.phase {
            Phase::Refining => autotest::refinement_pass(&mut ctx, &bundle, next_round)?,
            Phase::UnitTesting if state.counters.unit_iters >= max => EventKind::AutoLoopExhausted {
                stage: LoopStage::Unit,
                summary: autotest::exhaustion_summary(LoopStage::Unit, state.last_unit_report.as_ref(), None),
            },
            Phase::UnitTesting => {
                autotest::unit_round(&mut ctx, &bundle, &state.tests, state.counters.unit_runs + 1, next_round)?
            }
            Phase::SystemTesting if state.counters.system_iters >= max => EventKind::AutoLoopExhausted {
                stage: LoopStage::System,
                summary: autotest::exhaustion_summary(LoopStage::System, None, state.last_system.as_ref()),
            },
            Phase::SystemTesting => {
                let run = state.counters.system_runs + 1;
                autotest::system_round(&mut ctx, &bundle, &state.tests, run, next_round, &log_stem)?.0
            }
            Phase::BugFixing => {
                let problem = state.pending_problem.clone().unwrap_or_default();
                let (fix, exchanges) = autotest::fix_round(&mut ctx, &bundle, &problem, next_round)?;
                let warnings =
                    fix.error.iter().map(|e| format!("bug fix unusable, retesting previous code: {e}")).collect();
                let bundle = fix.bundle.unwrap_or(CodeBundle { round: next_round, ..bundle });
                EventKind::BundleProduced { bundle, origin: BundleOrigin::ManualFix, warnings, exchanges }
            }
            phase => return Err(SessionError::IllegalTransition { phase, action: "advance_auto".into() }),
        };
        self.emit(kind)
    }

    /// Advances until the session reaches a human gate or ends.
    pub fn run_auto(&mut self) -> Result<Phase, SessionError> {
        while !self.state.phase.is_gate() && !self.state.phase.is_terminal() {
            self.advance_auto()?;
        }
        Ok(self.state.phase)
    }

    fn run_loop(&mut self, phase: Phase, stage: LoopStage, action: &str) -> Result<LoopOutcome, SessionError> {
        self.require(phase, action)?;
        while self.state.phase == phase {
            self.advance_auto()?;
        }
        LoopOutcome::from_events(&self.state.events, stage)
            .ok_or_else(|| SessionError::InvalidEvent(format!("{action} ended without an outcome")))
    }

    pub fn unit_test_loop(&mut self) -> Result<LoopOutcome, SessionError> {
        self.run_loop(Phase::UnitTesting, LoopStage::Unit, "unit_test_loop")
    }

    pub fn system_test_loop(&mut self) -> Result<LoopOutcome, SessionError> {
        self.run_loop(Phase::SystemTesting, LoopStage::System, "system_test_loop")
    }

    /// Records a verdict and routes it. Returns the route taken.
    pub fn submit_manual_feedback(&mut self, feedback: ManualFeedback) -> Result<Route, SessionError> {
        self.require(Phase::ManualValidation, "submit_manual_feedback")?;
        let findings = self.state.bundle.as_ref().map_or(0, |b| detect_placeholders(b, &self.services.known).len());
        self.emit(EventKind::ManualVerdict { feedback, findings })?;
        self.finish_route()
    }

    fn finish_route(&mut self) -> Result<Route, SessionError> {
        let route = self
            .state
            .pending_route
            .clone()
            .ok_or_else(|| SessionError::InvalidEvent("no verdict awaiting routing".into()))?;
        let kind = match &route {
            Route::Complete => EventKind::Finalized {
                reason: FinalReason::AllPassed,
                winner_round: self.state.bundle.as_ref().map_or(0, |b| b.round),
            },
            Route::BudgetExhausted => EventKind::Finalized {
                reason: FinalReason::BudgetExhausted,
                winner_round: self.state.best_candidate().map_or(0, |c| c.round),
            },
            Route::BugFix { problem } => EventKind::BugfixRequested { problem: problem.clone() },
            Route::Redesign { edits } => {
                let added: Option<Vec<String>> = edits
                    .iter()
                    .map(|e| match e {
                        UseCaseEdit::Add { description } => Some(description.clone()),
                        _ => None,
                    })
                    .collect();
                match added {
                    Some(descriptions) => EventKind::NewUseCasesAdded { descriptions },
                    None => EventKind::UseCaseRevisionRequested { edits: edits.clone() },
                }
            }
        };
        self.emit(kind)?;
        Ok(route)
    }

    pub fn abort(&mut self, reason: &str) -> Result<(), SessionError> {
        if self.state.phase.is_terminal() {
            return Err(SessionError::SessionClosed(self.state.phase));
        }
        let reason = if reason.trim().is_empty() { "aborted by user" } else { reason.trim() };
        self.emit(EventKind::Aborted { reason: reason.to_string(), exchanges: Vec::new() })
    }
}
