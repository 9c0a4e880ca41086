use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::record::{pass_rate, EvalRecord, Verdict, VerdictMode};
use super::suite::BenchmarkTask;
use super::BenchError;
use crate::gateway::ChatGateway;
use crate::parsers::{SystemDesign, UseCaseEdit, UseCaseSet};
use crate::runner::RunStatus;
use crate::session::{ManualFeedback, Phase, Services, Session, SessionConfig, SessionError, UseCaseVerdict};

/// Decision at the use-case review gate.
#[derive(Debug, Clone, PartialEq)]
pub enum Review {
    Approve(Vec<UseCaseEdit>),
    Abort(String),
}

/// One manual-validation pass: a verdict per reference use case, and what
/// to tell the session.
#[derive(Debug, Clone, PartialEq)]
pub struct Judgement {
    pub references: Vec<Verdict>,
    pub feedback: ManualFeedback,
}

/// Supplies the human side of a benchmark run.
pub trait VerdictSource {
    fn mode(&self) -> VerdictMode;

    fn review_use_cases(&mut self, _task: &BenchmarkTask, _use_cases: &UseCaseSet) -> Result<Review, BenchError> {
        Ok(Review::Approve(Vec::new()))
    }

    /// A replacement design, or `None` to approve as is.
    fn review_design(
        &mut self,
        _task: &BenchmarkTask,
        _design: &SystemDesign,
    ) -> Result<Option<SystemDesign>, BenchError> {
        Ok(None)
    }

    fn judge(&mut self, task: &BenchmarkTask, session: &Session) -> Result<Judgement, BenchError>;
}

/// Feedback derived from reference verdicts. When every reference passes,
/// every session use case passes. Otherwise session use cases take the
/// verdict of the reference at the same position, and the failing
/// references (or the last start-up traceback) become the error message,
/// which sends the session to bug fixing.
pub fn feedback_for(task: &BenchmarkTask, session: &Session, references: &[Verdict]) -> ManualFeedback {
    let state = session.state();
    let ids: Vec<u32> = state.use_cases.as_ref().map(|u| u.ids().collect()).unwrap_or_default();
    if references.iter().all(|v| *v == Verdict::Pass) {
        return ManualFeedback::all_pass(ids);
    }
    let per_use_case = ids
        .iter()
        .map(|&id| {
            let pass = references.get(id as usize - 1) == Some(&Verdict::Pass);
            (id, if pass { UseCaseVerdict::Pass } else { UseCaseVerdict::Fail })
        })
        .collect();
    let crash = state.last_system.as_ref().and_then(|r| r.error_excerpt.clone());
    let message = crash.unwrap_or_else(|| {
        let failing: Vec<String> = task
            .reference_use_cases
            .iter()
            .zip(references)
            .filter(|(_, v)| **v != Verdict::Pass)
            .map(|(d, _)| format!("- {d}"))
            .collect();
        format!("The following use cases did not pass manual testing:\n{}", failing.join("\n"))
    });
    ManualFeedback { per_use_case, error_message: Some(message), ..ManualFeedback::default() }
}

/// A scripted check standing in for a person exercising one reference use
/// case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Check {
    Pass,
    Fail,
    /// The last start-up run exited cleanly or kept running.
    CleanStart,
    /// A file of the current code contains `text`.
    FileContains {
        file: String,
        text: String,
    },
}

impl Check {
    pub fn evaluate(&self, session: &Session) -> Verdict {
        let state = session.state();
        let ok = match self {
            Check::Pass => true,
            Check::Fail => false,
            Check::CleanStart => state.last_system.as_ref().is_some_and(|r| r.status == RunStatus::CleanStart),
            Check::FileContains { file, text } => {
                state.bundle.as_ref().and_then(|b| b.get(file)).is_some_and(|f| f.body.contains(text.as_str()))
            }
        };
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// Verdicts from predicates over the session's code and runs, one check
/// per reference use case. For regression runs; reports label them
/// scripted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckedVerdicts {
    pub checks: BTreeMap<String, Vec<Check>>,
}

impl VerdictSource for CheckedVerdicts {
    fn mode(&self) -> VerdictMode {
        VerdictMode::Scripted
    }

    fn judge(&mut self, task: &BenchmarkTask, session: &Session) -> Result<Judgement, BenchError> {
        let checks = self
            .checks
            .get(&task.task_id)
            .ok_or_else(|| BenchError::InvalidInput(format!("no checks for task `{}`", task.task_id)))?;
        if checks.len() != task.reference_use_cases.len() {
            return Err(BenchError::InvalidInput(format!(
                "task `{}` has {} reference use cases but {} checks",
                task.task_id,
                task.reference_use_cases.len(),
                checks.len()
            )));
        }
        let references: Vec<Verdict> = checks.iter().map(|c| c.evaluate(session)).collect();
        let feedback = feedback_for(task, session, &references);
        Ok(Judgement { references, feedback })
    }
}

/// Verdicts from a fixed list, one entry per manual round; the last entry
/// repeats once the list runs out.
#[derive(Debug, Clone, Default)]
pub struct QueuedVerdicts {
    review: Option<Review>,
    rounds: VecDeque<Vec<Verdict>>,
    last: Option<Vec<Verdict>>,
}

impl QueuedVerdicts {
    pub fn new(rounds: impl IntoIterator<Item = Vec<Verdict>>) -> Self {
        Self { rounds: rounds.into_iter().collect(), ..Self::default() }
    }

    pub fn with_review(mut self, review: Review) -> Self {
        self.review = Some(review);
        self
    }
}

impl VerdictSource for QueuedVerdicts {
    fn mode(&self) -> VerdictMode {
        VerdictMode::Scripted
    }

    fn review_use_cases(&mut self, _task: &BenchmarkTask, _use_cases: &UseCaseSet) -> Result<Review, BenchError> {
        Ok(self.review.clone().unwrap_or(Review::Approve(Vec::new())))
    }

    fn judge(&mut self, task: &BenchmarkTask, session: &Session) -> Result<Judgement, BenchError> {
        if let Some(next) = self.rounds.pop_front() {
            self.last = Some(next);
        }
        let references = self.last.clone().ok_or_else(|| BenchError::InvalidInput("no verdicts queued".into()))?;
        if references.len() != task.reference_use_cases.len() {
            return Err(BenchError::InvalidInput(format!(
                "{} verdicts for {} reference use cases",
                references.len(),
                task.reference_use_cases.len()
            )));
        }
        let feedback = feedback_for(task, session, &references);
        Ok(Judgement { references, feedback })
    }
}

/// Where benchmark sessions live and what they run on.
pub struct Harness {
    pub sessions_root: PathBuf,
    pub services: Arc<Services>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Driven {
    pub record: EvalRecord,
    pub session_id: String,
    pub session_dir: PathBuf,
    pub final_phase: Phase,
}

impl Harness {
    pub fn new(sessions_root: &Path, services: Arc<Services>) -> Self {
        Self { sessions_root: sessions_root.to_path_buf(), services }
    }

    /// Runs one task through a full session. The record's verdicts are the
    /// ones given to the winning code; an aborted session yields all
    /// untested verdicts with the abort flag set.
    pub fn drive_task(
        &self,
        task: &BenchmarkTask,
        config: SessionConfig,
        gateway: ChatGateway,
        source: &mut dyn VerdictSource,
    ) -> Result<Driven, BenchError> {
        let mut session = Session::create(&self.sessions_root, &task.prompt, config, gateway, self.services.clone())?;
        let mut judged: BTreeMap<u32, Vec<Verdict>> = BTreeMap::new();
        if let Err(e) = run(&mut session, task, source, &mut judged) {
            if session.phase() != Phase::Aborted {
                return Err(e);
            }
        }

        let mut record = EvalRecord::new(&task.task_id, task.reference_use_cases.len())?;
        let state = session.state();
        if state.phase == Phase::Aborted {
            record.aborted = true;
        } else if let Some(verdicts) = state.winner_round.and_then(|r| judged.remove(&r)) {
            record.verdicts = verdicts;
        }
        record.pass_rate = pass_rate(record.passed(), record.total());
        record.tokens = session.token_usage();
        (record.h1, record.h2) = session.revision_counters();
        record.mode = source.mode();
        Ok(Driven {
            record,
            session_id: session.id().to_string(),
            session_dir: session.dir().to_path_buf(),
            final_phase: session.phase(),
        })
    }
}

fn run(
    session: &mut Session,
    task: &BenchmarkTask,
    source: &mut dyn VerdictSource,
    judged: &mut BTreeMap<u32, Vec<Verdict>>,
) -> Result<(), BenchError> {
    session.draft_use_cases()?;
    let use_cases = session.state().use_cases.clone().unwrap_or_default();
    match source.review_use_cases(task, &use_cases)? {
        Review::Abort(reason) => return Ok(session.abort(&reason)?),
        Review::Approve(edits) => {
            session.submit_use_case_edits(edits)?;
            session.approve_use_cases()?;
        }
    }
    loop {
        match session.run_auto()? {
            Phase::DesignReview => {
                let design = session.state().design.clone().unwrap_or_default();
                if let Some(replacement) = source.review_design(task, &design)? {
                    session.edit_design(replacement)?;
                }
                session.approve_design()?;
            }
            Phase::ManualValidation => {
                let judgement = source.judge(task, session)?;
                let round = session.state().bundle.as_ref().map_or(0, |b| b.round);
                judged.insert(round, judgement.references);
                session.submit_manual_feedback(judgement.feedback)?;
            }
            Phase::Completed | Phase::Aborted => return Ok(()),
            other => {
                return Err(BenchError::Session(SessionError::InvalidEvent(format!("auto run stopped in {other}"))))
            }
        }
    }
}

/// The best of several trials of one task: highest pass rate, earliest
/// trial on ties.
pub fn best_of(trials: &[EvalRecord]) -> Option<&EvalRecord> {
    trials.iter().rev().max_by(|a, b| a.pass_rate.total_cmp(&b.pass_rate))
}
