//! Event generators for properties of the fold: mostly what a well-behaved
//! engine would emit, sometimes deliberately inconsistent.

use caseloop_core::parsers::{CodeBundle, CodeFile, DesignFile, SystemDesign, UseCaseEdit, UseCaseSet};
use caseloop_core::runner::{RunStatus, TestFailure, TestReport};
use caseloop_core::session::{
    BundleOrigin, EventKind, FinalReason, FixRound, LoopStage, ManualFeedback, Phase, RunSummary, SessionConfig,
    SessionEvent, SessionState, UseCaseVerdict,
};
use proptest::prelude::*;

pub fn bundle(round: u32) -> CodeBundle {
    CodeBundle::new(vec![CodeFile::new("main.py", "python", "", &format!("print({round})"))], round)
}

pub fn design() -> SystemDesign {
    SystemDesign { files: vec![DesignFile { filename: "main.py".into(), responsibility: "entry".into() }] }
}

pub fn genesis(max_auto: u32, max_manual: u32, review: bool) -> SessionState {
    let config = SessionConfig {
        max_auto_iterations: max_auto,
        max_manual_rounds: max_manual,
        design_review_enabled: review,
        ..SessionConfig::default()
    };
    SessionState::genesis(SessionEvent {
        seq: 1,
        timestamp_ms: 0,
        kind: EventKind::TaskSubmitted { session_id: "s".into(), task_prompt: "task".into(), config },
    })
    .unwrap()
}

pub fn feedback(knob: u8, ids: &[u32]) -> ManualFeedback {
    match knob % 5 {
        0 => ManualFeedback::all_pass(ids.iter().copied()),
        1 => {
            let mut fb = ManualFeedback::all_pass(ids.iter().copied());
            if let Some(first) = ids.first() {
                fb.per_use_case.insert(*first, UseCaseVerdict::Fail);
            }
            fb
        }
        2 => ManualFeedback::default().with_error("Traceback (most recent call last):\nKeyError: 1"),
        3 => ManualFeedback {
            revised_use_cases: Some(vec![UseCaseEdit::Modify { id: ids[0], description: format!("changed {knob}") }]),
            ..ManualFeedback::default()
        },
        _ => ManualFeedback { new_use_cases: Some(vec![format!("new {knob}")]), ..ManualFeedback::default() },
    }
}

/// Builds an event from a choice and knobs, usually consistent with the
/// current state, sometimes deliberately not.
pub fn event_for(state: &SessionState, choice: u8, knob: u8, honest: bool) -> EventKind {
    let c = &state.counters;
    let next_round = state.last_round() + 1;
    let round = if honest { next_round } else { u32::from(knob % 8) };
    let failing = TestReport {
        total: 2,
        passed: 1,
        failures: vec![TestFailure { test_id: "t".into(), message: format!("m{knob}") }],
    };
    let fix = |bundle_ok: bool| FixRound {
        problem: "p".into(),
        bundle: bundle_ok.then(|| bundle(round)),
        error: (!bundle_ok).then(|| "unparseable".to_string()),
    };
    let ids: Vec<u32> = state.use_cases.as_ref().map(|u| u.ids().collect()).unwrap_or_else(|| vec![1]);
    // aborting ends everything, so keep it rare
    let mut pick = if choice == 255 && knob == 255 { 18 } else { choice % 18 };
    if honest && !knob.is_multiple_of(4) {
        pick = guided(state, knob).unwrap_or(pick);
    }
    match pick {
        0 => EventKind::UseCasesDrafted { use_cases: UseCaseSet::from_descriptions(["a", "b"]), exchanges: Vec::new() },
        1 => EventKind::UseCasesEdited {
            edits: vec![UseCaseEdit::Modify { id: if honest { ids[0] } else { 99 }, description: format!("e{knob}") }],
        },
        2 => EventKind::UseCasesApproved,
        3 => EventKind::DesignProduced { design: design(), findings: Vec::new(), exchanges: Vec::new() },
        4 => EventKind::DesignEdited { design: design() },
        5 => EventKind::DesignApproved,
        6 => EventKind::BundleProduced {
            bundle: bundle(round),
            origin: match (honest, state.phase) {
                (true, Phase::Coding) => BundleOrigin::Codegen,
                (true, Phase::BugFixing) => BundleOrigin::ManualFix,
                _ if knob.is_multiple_of(2) => BundleOrigin::Codegen,
                _ => BundleOrigin::ManualFix,
            },
            warnings: Vec::new(),
            exchanges: Vec::new(),
        },
        7 => EventKind::RefinementApplied {
            findings: Vec::new(),
            bundle: knob.is_multiple_of(2).then(|| bundle(round)),
            warning: None,
            exchanges: Vec::new(),
        },
        8 | 9 => {
            let pass = knob.is_multiple_of(3);
            EventKind::UnitTestRound {
                run: if honest { c.unit_runs + 1 } else { u32::from(knob % 4) },
                tests: Vec::new(),
                dropped_tests: Vec::new(),
                report: if pass { TestReport::default() } else { failing },
                fix: (!pass || !honest).then(|| fix(!knob.is_multiple_of(5))),
                warnings: Vec::new(),
                exchanges: Vec::new(),
            }
        }
        10 | 11 => {
            let clean = knob.is_multiple_of(3);
            EventKind::SystemTestRound {
                run: if honest { c.system_runs + 1 } else { u32::from(knob % 4) },
                outcome: RunSummary {
                    status: if clean { RunStatus::Timeout } else { RunStatus::RuntimeError },
                    exit_code: None,
                    error_excerpt: (!clean).then(|| "Traceback".to_string()),
                },
                fix: (!clean || !honest).then(|| fix(!knob.is_multiple_of(5))),
                exchanges: Vec::new(),
            }
        }
        12 => EventKind::AutoLoopExhausted {
            stage: match (honest, state.phase) {
                (true, Phase::UnitTesting) => LoopStage::Unit,
                (true, Phase::SystemTesting) => LoopStage::System,
                _ if knob.is_multiple_of(2) => LoopStage::Unit,
                _ => LoopStage::System,
            },
            summary: "s".into(),
        },
        13 | 14 => EventKind::ManualVerdict { feedback: feedback(knob, &ids), findings: usize::from(knob % 3) },
        15 => match (&state.pending_route, honest) {
            (Some(caseloop_core::session::Route::BugFix { problem }), true) => {
                EventKind::BugfixRequested { problem: problem.clone() }
            }
            _ => EventKind::BugfixRequested { problem: format!("x{knob}") },
        },
        16 => match (&state.pending_route, honest) {
            (Some(caseloop_core::session::Route::Redesign { edits }), true) => {
                let adds: Option<Vec<String>> = edits
                    .iter()
                    .map(|e| match e {
                        UseCaseEdit::Add { description } => Some(description.clone()),
                        _ => None,
                    })
                    .collect();
                match adds {
                    Some(descriptions) => EventKind::NewUseCasesAdded { descriptions },
                    None => EventKind::UseCaseRevisionRequested { edits: edits.clone() },
                }
            }
            _ => EventKind::UseCaseRevisionRequested { edits: vec![UseCaseEdit::Delete { id: 1 }] },
        },
        17 => {
            let reason = if knob.is_multiple_of(2) { FinalReason::AllPassed } else { FinalReason::BudgetExhausted };
            let winner = match (honest, reason) {
                (true, FinalReason::AllPassed) => state.bundle.as_ref().map_or(0, |b| b.round),
                (true, FinalReason::BudgetExhausted) => state.best_candidate().map_or(0, |c| c.round),
                _ => u32::from(knob),
            };
            EventKind::Finalized { reason, winner_round: winner }
        }
        _ => EventKind::Aborted { reason: "stop".into(), exchanges: Vec::new() },
    }
}

/// The event a well-behaved engine would most likely emit next.
pub fn guided(state: &SessionState, knob: u8) -> Option<u8> {
    let c = &state.counters;
    let max = state.config.max_auto_iterations;
    Some(match state.phase {
        Phase::TaskIntake => 0,
        Phase::UseCaseReview => {
            if knob.is_multiple_of(3) {
                1
            } else {
                2
            }
        }
        Phase::Designing => 3,
        Phase::DesignReview => {
            if knob.is_multiple_of(3) {
                4
            } else {
                5
            }
        }
        Phase::Coding | Phase::BugFixing => 6,
        Phase::Refining => 7,
        Phase::UnitTesting => {
            if c.unit_iters >= max {
                12
            } else {
                8
            }
        }
        Phase::SystemTesting => {
            if c.system_iters >= max {
                12
            } else {
                10
            }
        }
        Phase::ManualValidation => match &state.pending_route {
            None => 13,
            Some(caseloop_core::session::Route::BugFix { .. }) => 15,
            Some(caseloop_core::session::Route::Redesign { .. }) => 16,
            Some(_) => 17,
        },
        _ => return None,
    })
}

pub fn check_invariants(s: &SessionState) -> Result<(), TestCaseError> {
    let max_auto = s.config.max_auto_iterations;
    let max_manual = s.config.max_manual_rounds;
    prop_assert!(s.counters.h1 <= 1);
    prop_assert!(s.counters.unit_iters <= max_auto);
    prop_assert!(s.counters.system_iters <= max_auto);
    prop_assert!(s.counters.manual_rounds <= max_manual);
    prop_assert!(s.counters.h2 <= max_manual);
    let kinds: Vec<&str> = s.events.iter().map(|e| e.kind.name()).collect();
    let seqs: Vec<u64> = s.events.iter().map(|e| e.seq).collect();
    prop_assert_eq!(seqs, (1..=s.events.len() as u64).collect::<Vec<_>>());
    if kinds.contains(&"DesignProduced") {
        prop_assert!(kinds.contains(&"UseCasesApproved"));
    }
    if s.phase == Phase::Completed {
        let verdict = s.events.iter().rev().find_map(|e| match &e.kind {
            EventKind::ManualVerdict { feedback, .. } => Some(feedback.clone()),
            _ => None,
        });
        let all_pass = verdict.as_ref().is_some_and(|fb| {
            fb.error_message.is_none()
                && fb.revised_use_cases.is_none()
                && fb.new_use_cases.is_none()
                && s.use_cases.as_ref().unwrap().ids().all(|id| fb.per_use_case.get(&id) == Some(&UseCaseVerdict::Pass))
        });
        prop_assert!(all_pass || s.final_reason == Some(FinalReason::BudgetExhausted));
        prop_assert!(verdict.is_some());
    }
    Ok(())
}

/// Arbitrary event sequences never break budgets, gates or replay.
pub fn fold_case(
    max_auto: u32,
    max_manual: u32,
    review: bool,
    steps: Vec<(u8, u8, bool)>,
) -> Result<(), TestCaseError> {
    let mut state = genesis(max_auto, max_manual, review);
    for (choice, knob, honest) in steps {
        let kind = event_for(&state, choice, knob, honest);
        let event = SessionEvent { seq: state.next_seq(), timestamp_ms: state.next_seq(), kind };
        let before = state.clone();
        let terminal = state.phase.is_terminal();
        match state.apply(event) {
            Ok(()) => prop_assert!(!terminal, "terminal session accepted an event"),
            Err(_) => prop_assert_eq!(&state, &before),
        }
        check_invariants(&state)?;
    }
    let replayed = SessionState::from_events(state.events.clone()).unwrap();
    prop_assert_eq!(replayed, state);
    Ok(())
}

/// Any number of accepted edit batches counts once.
pub fn h1_case(n: usize) -> Result<(), TestCaseError> {
    let mut s = genesis(5, 5, false);
    let push = |s: &mut SessionState, kind| {
        let e = SessionEvent { seq: s.next_seq(), timestamp_ms: 0, kind };
        s.apply(e).unwrap();
    };
    push(&mut s, EventKind::UseCasesDrafted { use_cases: UseCaseSet::from_descriptions(["a"]), exchanges: Vec::new() });
    for i in 0..n {
        push(&mut s, EventKind::UseCasesEdited { edits: vec![UseCaseEdit::Add { description: format!("d{i}") }] });
        prop_assert_eq!(s.counters.h1, 1);
    }
    prop_assert_eq!(s.use_cases.as_ref().unwrap().len(), n + 1);
    Ok(())
}

/// Manual verdicts route per the feedback variant after `rounds_used` bug-fix rounds.
pub fn routing_case(knob: u8, rounds_used: u32) -> Result<(), TestCaseError> {
    let mut s = genesis(5, 5, false);
    let push = |s: &mut SessionState, kind| {
        let e = SessionEvent { seq: s.next_seq(), timestamp_ms: 0, kind };
        s.apply(e)
    };
    let setup = [
        EventKind::UseCasesDrafted { use_cases: UseCaseSet::from_descriptions(["a", "b"]), exchanges: Vec::new() },
        EventKind::UseCasesApproved,
        EventKind::DesignProduced { design: design(), findings: Vec::new(), exchanges: Vec::new() },
        EventKind::BundleProduced {
            bundle: bundle(1),
            origin: BundleOrigin::Codegen,
            warnings: Vec::new(),
            exchanges: Vec::new(),
        },
        EventKind::RefinementApplied { findings: Vec::new(), bundle: None, warning: None, exchanges: Vec::new() },
    ];
    for k in setup {
        push(&mut s, k).unwrap();
    }
    // walk through `rounds_used` bug-fix rounds first
    for i in 0..=rounds_used {
        let run = s.counters.unit_runs + 1;
        push(
            &mut s,
            EventKind::UnitTestRound {
                run,
                tests: Vec::new(),
                dropped_tests: Vec::new(),
                report: TestReport::default(),
                fix: None,
                warnings: Vec::new(),
                exchanges: Vec::new(),
            },
        )
        .unwrap();
        push(
            &mut s,
            EventKind::SystemTestRound {
                run: 1,
                outcome: RunSummary { status: RunStatus::CleanStart, exit_code: Some(0), error_excerpt: None },
                fix: None,
                exchanges: Vec::new(),
            },
        )
        .unwrap();
        if i < rounds_used {
            push(&mut s, EventKind::ManualVerdict { feedback: ManualFeedback::default().with_error("e"), findings: 0 })
                .unwrap();
            push(&mut s, EventKind::BugfixRequested { problem: "e".into() }).unwrap();
            let b = bundle(s.last_round() + 1);
            push(
                &mut s,
                EventKind::BundleProduced {
                    bundle: b,
                    origin: BundleOrigin::ManualFix,
                    warnings: Vec::new(),
                    exchanges: Vec::new(),
                },
            )
            .unwrap();
        }
    }
    prop_assert_eq!(s.phase, Phase::ManualValidation);
    let fb = feedback(knob, &[1, 2]);
    push(&mut s, EventKind::ManualVerdict { feedback: fb.clone(), findings: 0 }).unwrap();
    let h2 = s.counters.h2;
    let next = match s.pending_route.clone().unwrap() {
        caseloop_core::session::Route::Complete => {
            EventKind::Finalized { reason: FinalReason::AllPassed, winner_round: s.bundle.as_ref().unwrap().round }
        }
        caseloop_core::session::Route::BugFix { problem } => EventKind::BugfixRequested { problem },
        caseloop_core::session::Route::Redesign { edits } => EventKind::UseCaseRevisionRequested { edits },
        caseloop_core::session::Route::BudgetExhausted => unreachable!(),
    };
    // NewUseCasesAdded is the spelling for pure additions
    let next = match next {
        EventKind::UseCaseRevisionRequested { edits } if fb.new_use_cases.is_some() => EventKind::NewUseCasesAdded {
            descriptions: edits
                .into_iter()
                .filter_map(|e| match e {
                    UseCaseEdit::Add { description } => Some(description),
                    _ => None,
                })
                .collect(),
        },
        other => other,
    };
    push(&mut s, next).unwrap();
    if fb.error_message.is_some() {
        prop_assert_eq!(s.phase, Phase::BugFixing);
        prop_assert_eq!(s.counters.h2, h2 + 1);
    } else if fb.revised_use_cases.is_some() || fb.new_use_cases.is_some() {
        prop_assert_eq!(s.phase, Phase::Designing);
        prop_assert_eq!(s.counters.h2, h2 + 1);
    } else if knob.is_multiple_of(5) {
        prop_assert_eq!(s.phase, Phase::Completed);
    } else {
        prop_assert_eq!(s.phase, Phase::BugFixing);
    }
    Ok(())
}
