mod common;

use std::sync::Arc;

use caseloop_core::autotest::{LoopKind, LoopReport};
use caseloop_core::fakes::{crashed, ScriptedRunner};
use caseloop_core::parsers::UseCaseEdit;
use caseloop_core::runner::{TestFailure, TestReport};
use caseloop_core::session::{
    load_state, EventKind, FinalReason, ManualFeedback, Phase, Route, SessionConfig, SessionError, UseCaseVerdict,
};
use common::*;

fn verdicts(pairs: &[(u32, bool)]) -> ManualFeedback {
    let mut fb = ManualFeedback::default();
    for (id, ok) in pairs {
        fb.per_use_case.insert(*id, if *ok { UseCaseVerdict::Pass } else { UseCaseVerdict::Fail });
    }
    fb
}

/// Answers that take a one-file project straight to manual validation.
fn tiny_script(extra: &[&str]) -> Vec<String> {
    let mut s = vec![
        use_case_json(&["User can start the app.", "User can quit."]),
        r#"{"main.py": "entry"}"#.to_string(),
        fenced("main.py", "print('hi')"),
    ];
    s.extend(extra.iter().map(|e| e.to_string()));
    s
}

fn to_manual(
    config: SessionConfig,
    extra: &[&str],
    runner: Arc<ScriptedRunner>,
) -> (tempfile::TempDir, caseloop_core::session::Session) {
    let root = tempfile::tempdir().unwrap();
    let (gw, _) = scripted_gateway(tiny_script(extra));
    let mut s = new_session(root.path(), "tiny app", config, gw, runner);
    s.run_auto().unwrap();
    s.approve_use_cases().unwrap();
    assert_eq!(s.run_auto().unwrap(), Phase::ManualValidation);
    (root, s)
}

fn fail_report(msg: &str) -> TestReport {
    TestReport { total: 1, passed: 0, failures: vec![TestFailure { test_id: "t".into(), message: msg.into() }] }
}

#[test]
fn iris_walkthrough() {
    let root = tempfile::tempdir().unwrap();
    let (gw, transport) = scripted_gateway(iris_script());
    let runner = Arc::new(ScriptedRunner::new());
    let mut s = new_session(root.path(), IRIS_TASK, SessionConfig::default(), gw, runner.clone());
    assert_eq!((s.phase(), s.revision_counters()), (Phase::TaskIntake, (0, 0)));

    s.draft_use_cases().unwrap();
    assert_eq!(s.phase(), Phase::UseCaseReview);
    assert_eq!(s.state().use_cases.as_ref().unwrap().descriptions(), IRIS_DRAFT.to_vec());

    let board = vec![UseCaseEdit::Modify { id: 4, description: IRIS_BOARD.into() }];
    s.submit_use_case_edits(board.clone()).unwrap();
    s.submit_use_case_edits(board).unwrap();
    s.submit_use_case_edits(Vec::new()).unwrap();
    assert_eq!(s.revision_counters(), (1, 0));
    assert_eq!(s.state().use_cases.as_ref().unwrap().get(4).unwrap().description, IRIS_BOARD);
    assert!(matches!(s.advance_auto(), Err(SessionError::IllegalTransition { .. })));

    s.approve_use_cases().unwrap();
    assert_eq!(s.run_auto().unwrap(), Phase::ManualValidation);
    let st = s.state();
    assert_eq!(st.design.as_ref().unwrap().filenames(), vec!["main.py", "classifier.py", "gui.py", "utils.py"]);
    assert_eq!(st.findings.len(), 1);
    assert_eq!(st.bundle.as_ref().unwrap().round, 2);
    assert!(st.bundle.as_ref().unwrap().get("utils.py").unwrap().body.contains("sum(values)"));
    assert_eq!(st.tests.len(), 3);
    assert_eq!(runner.calls(), vec!["run_tests@2", "run_entry@2"]);

    let mut fb = verdicts(&[(1, true), (2, true), (3, true), (4, false)]);
    fb.revised_use_cases = Some(iris_manual_edits());
    assert!(matches!(s.submit_manual_feedback(fb).unwrap(), Route::Redesign { .. }));
    assert_eq!(s.phase(), Phase::Designing);
    assert_eq!(s.state().use_cases.as_ref().unwrap().descriptions(), IRIS_MANUAL.to_vec());
    assert_eq!(s.revision_counters(), (1, 1));
    assert!(matches!(s.events().last().unwrap().kind, EventKind::UseCaseRevisionRequested { .. }));

    assert_eq!(s.run_auto().unwrap(), Phase::ManualValidation);
    assert_eq!(s.submit_manual_feedback(ManualFeedback::all_pass(1..=4)).unwrap(), Route::Complete);
    let st = s.state();
    assert_eq!(st.phase, Phase::Completed);
    assert_eq!(st.final_reason, Some(FinalReason::AllPassed));
    assert!(st.bundle.as_ref().unwrap().get("gui.py").unwrap().body.contains("# v2"));
    assert_eq!(st.candidates.len(), 2);
    assert_eq!(transport.remaining(), 0);
    assert_eq!(st.exchanges.len(), iris_script().len());
    assert_eq!(s.token_usage().total(), st.exchanges.iter().map(|e| e.usage.total()).sum::<u64>());

    assert_eq!(&load_state(s.dir()).unwrap(), s.state());
    assert!(matches!(s.abort("late"), Err(SessionError::SessionClosed(Phase::Completed))));
}

#[test]
fn create_rejects_blank_prompt_and_keeps_config() {
    let root = tempfile::tempdir().unwrap();
    let (gw, _) = scripted_gateway(Vec::new());
    let err = caseloop_core::session::Session::create(
        root.path(),
        "   ",
        SessionConfig::default(),
        gw,
        services(Arc::new(ScriptedRunner::new())),
    )
    .unwrap_err();
    assert_eq!(err.code(), "InvalidInput");
    let (gw, _) = scripted_gateway(Vec::new());
    let config = SessionConfig { max_auto_iterations: 1, ..SessionConfig::default() };
    let s = new_session(root.path(), IRIS_TASK, config.clone(), gw, Arc::new(ScriptedRunner::new()));
    assert_eq!(s.state().config, config);
}

#[test]
fn draft_that_never_parses_aborts() {
    let root = tempfile::tempdir().unwrap();
    let (gw, _) = scripted_gateway(vec!["I cannot do JSON.".into(), "Still prose.".into()]);
    let mut s = new_session(root.path(), IRIS_TASK, SessionConfig::default(), gw, Arc::new(ScriptedRunner::new()));
    let err = s.draft_use_cases().unwrap_err();
    assert_eq!(err.code(), "DraftFailed");
    assert_eq!(s.phase(), Phase::Aborted);
    assert_eq!(s.state().exchanges.len(), 2);
    assert_eq!(s.state().exchanges[1].request.len(), 4);
}

#[test]
fn reask_recovers_a_bad_first_answer() {
    let root = tempfile::tempdir().unwrap();
    let (gw, transport) = scripted_gateway(vec!["no".into(), use_case_json(&["User can play."])]);
    let mut s = new_session(root.path(), "game", SessionConfig::default(), gw, Arc::new(ScriptedRunner::new()));
    s.draft_use_cases().unwrap();
    assert_eq!(s.phase(), Phase::UseCaseReview);
    let second = &transport.requests()[1]["messages"];
    assert_eq!(second[2]["role"], "assistant");
    assert!(second[3]["content"].as_str().unwrap().contains("no parseable JSON"));
}

#[test]
fn design_review_gate() {
    let root = tempfile::tempdir().unwrap();
    let (gw, _) = scripted_gateway(tiny_script(&[]));
    let config = SessionConfig { design_review_enabled: true, ..SessionConfig::default() };
    let mut s = new_session(root.path(), "tiny", config, gw, Arc::new(ScriptedRunner::new()));
    s.run_auto().unwrap();
    s.approve_use_cases().unwrap();
    assert_eq!(s.run_auto().unwrap(), Phase::DesignReview);
    let mut design = s.state().design.clone().unwrap();
    design.files[0].responsibility = "Starts everything.".into();
    s.edit_design(design.clone()).unwrap();
    design.files.clear();
    assert_eq!(s.edit_design(design).unwrap_err().code(), "InvalidInput");
    s.approve_design().unwrap();
    assert_eq!(s.phase(), Phase::Coding);
    assert_eq!(s.state().design.as_ref().unwrap().files[0].responsibility, "Starts everything.");
}

#[test]
fn zero_test_targets_pass_with_warning() {
    let (_root, s) = to_manual(SessionConfig::default(), &[], Arc::new(ScriptedRunner::new()));
    assert!(s.state().warnings.iter().any(|w| w.contains("no unit tests")));
    assert_eq!(s.state().last_unit_report, Some(TestReport::default()));
}

#[test]
fn unit_loop_fixed_in_second_round() {
    let root = tempfile::tempdir().unwrap();
    let runner = Arc::new(ScriptedRunner::new());
    runner.push_report(fail_report("AssertionError: 0.5 != 0.25"));
    let mut script = tiny_script(&[]);
    script[1] = r#"{"main.py": "entry", "calc.py": "math"}"#.into();
    script[2] = files(&[("main.py", "import calc"), ("calc.py", "def div(a, b):\n    return a / b")]);
    script.push(fenced("test_calc.py", "import calc"));
    script.push(fenced("calc.py", "def div(a, b):\n    return a / b / 2"));
    script.push(fenced("test_calc.py", "import calc  # again"));
    let (gw, _) = scripted_gateway(script);
    let mut s = new_session(root.path(), "calc", SessionConfig::default(), gw, runner.clone());
    s.run_auto().unwrap();
    s.approve_use_cases().unwrap();
    while s.phase() != Phase::UnitTesting {
        s.advance_auto().unwrap();
    }
    let out = s.unit_test_loop().unwrap();
    assert_eq!((out.kind, out.rounds_used, out.history.len()), (LoopKind::AllPassed, 2, 1));
    assert_eq!(out.history[0].problem, "t\nAssertionError: 0.5 != 0.25");
    assert_eq!(out.history[0].bundle_round, Some(2));
    // calc.py changed, so its tests were written again
    let rounds: Vec<usize> = s
        .events()
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::UnitTestRound { tests, .. } => Some(tests.len()),
            _ => None,
        })
        .collect();
    assert_eq!(rounds, vec![1, 1]);
    assert_eq!(s.phase(), Phase::SystemTesting);
}

#[test]
fn unit_loop_exhausts_after_five_fix_rounds() {
    let root = tempfile::tempdir().unwrap();
    let runner = Arc::new(ScriptedRunner::new());
    let mut script = tiny_script(&[]);
    script[1] = r#"{"main.py": "entry", "calc.py": "math"}"#.into();
    script[2] = files(&[("main.py", "import calc"), ("calc.py", "X = 0")]);
    script.push(fenced("test_calc.py", "import calc"));
    for i in 1..=5 {
        runner.push_report(fail_report(&format!("failure {i}")));
        // same calc.py each time, so tests are reused
        script.push(fenced("calc.py", "X = 0"));
    }
    let (gw, transport) = scripted_gateway(script);
    let mut s = new_session(root.path(), "calc", SessionConfig::default(), gw, runner);
    s.run_auto().unwrap();
    s.approve_use_cases().unwrap();
    while s.phase() != Phase::UnitTesting {
        s.advance_auto().unwrap();
    }
    let out = s.unit_test_loop().unwrap();
    assert_eq!((out.kind, out.rounds_used, out.history.len()), (LoopKind::Exhausted, 5, 5));
    assert!(matches!(out.final_report, LoopReport::Unit(ref r) if r.failures[0].message == "failure 5"));
    assert_eq!(s.state().counters.unit_iters, 5);
    assert_eq!(transport.remaining(), 0);
    assert_eq!(s.phase(), Phase::SystemTesting);
}

#[test]
fn system_loop_exhausts_with_five_entry_history() {
    let root = tempfile::tempdir().unwrap();
    let runner = Arc::new(ScriptedRunner::new());
    let mut script = tiny_script(&[]);
    for i in 1..=5 {
        runner.push_entry(crashed(&format!("Traceback (most recent call last):\nValueError: {i}")));
        script.push(fenced("main.py", &format!("print({i})")));
    }
    let (gw, _) = scripted_gateway(script);
    let mut s = new_session(root.path(), "tiny", SessionConfig::default(), gw, runner);
    s.run_auto().unwrap();
    s.approve_use_cases().unwrap();
    while s.phase() != Phase::SystemTesting {
        s.advance_auto().unwrap();
    }
    let out = s.system_test_loop().unwrap();
    assert_eq!((out.kind, out.rounds_used, out.history.len()), (LoopKind::Exhausted, 5, 5));
    assert_eq!(out.history[4].problem, "Traceback (most recent call last):\nValueError: 5");
    let rounds: Vec<u32> = out.history.iter().map(|h| h.bundle_round.unwrap()).collect();
    assert_eq!(rounds, vec![2, 3, 4, 5, 6]);
    assert_eq!(s.phase(), Phase::ManualValidation);
    match &s.events().last().unwrap().kind {
        EventKind::AutoLoopExhausted { summary, .. } => assert!(summary.ends_with("ValueError: 5")),
        other => panic!("unexpected {other:?}"),
    }
    assert!(s.dir().join("logs/0008-system.stderr").exists());
}

#[test]
fn error_message_routes_to_bug_fixing() {
    let tb = "Traceback (most recent call last):\n  File \"main.py\", line 1\nNameError: x";
    let runner = Arc::new(ScriptedRunner::new());
    let (_root, mut s) = to_manual(SessionConfig::default(), &["main.py\n```python\nprint('fixed')\n```"], runner);
    let route = s.submit_manual_feedback(verdicts(&[(1, false)]).with_error(tb)).unwrap();
    assert_eq!(route, Route::BugFix { problem: tb.into() });
    assert_eq!((s.phase(), s.revision_counters()), (Phase::BugFixing, (0, 1)));
    assert_eq!(s.state().pending_problem.as_deref(), Some(tb));
    s.advance_auto().unwrap();
    assert_eq!(s.phase(), Phase::UnitTesting);
    assert_eq!(s.state().bundle.as_ref().unwrap().files[0].body, "print('fixed')");
    assert_eq!(s.run_auto().unwrap(), Phase::ManualValidation);
}

#[test]
fn new_use_cases_restart_from_design() {
    let runner = Arc::new(ScriptedRunner::new());
    let (_root, mut s) = to_manual(SessionConfig::default(), &[], runner);
    let fb = ManualFeedback { new_use_cases: Some(vec!["User can pause.".into()]), ..verdicts(&[(1, true)]) };
    s.submit_manual_feedback(fb).unwrap();
    assert_eq!(s.phase(), Phase::Designing);
    assert!(matches!(s.events().last().unwrap().kind, EventKind::NewUseCasesAdded { .. }));
    assert_eq!(s.state().use_cases.as_ref().unwrap().len(), 3);
}

#[test]
fn invalid_feedback_is_rejected_without_change() {
    let (_root, mut s) = to_manual(SessionConfig::default(), &[], Arc::new(ScriptedRunner::new()));
    let before = s.state().clone();
    let both = ManualFeedback {
        error_message: Some("boom".into()),
        revised_use_cases: Some(vec![UseCaseEdit::Delete { id: 1 }]),
        ..ManualFeedback::default()
    };
    assert_eq!(s.submit_manual_feedback(both).unwrap_err().code(), "InvalidFeedback");
    assert_eq!(s.submit_manual_feedback(verdicts(&[(7, true)])).unwrap_err().code(), "InvalidFeedback");
    assert_eq!(s.state(), &before);
    assert_eq!(load_state(s.dir()).unwrap(), before);
}

#[test]
fn manual_budget_exhaustion_picks_best_candidate() {
    let config = SessionConfig { max_manual_rounds: 2, ..SessionConfig::default() };
    let fix1 = fenced("main.py", "print('v2')");
    let fix2 = fenced("main.py", "print('v3')");
    let (_root, mut s) = to_manual(config, &[&fix1, &fix2], Arc::new(ScriptedRunner::new()));
    s.submit_manual_feedback(verdicts(&[(1, true), (2, false)])).unwrap();
    s.run_auto().unwrap();
    s.submit_manual_feedback(verdicts(&[(1, false), (2, false)])).unwrap();
    s.run_auto().unwrap();
    assert_eq!(s.state().counters.manual_rounds, 2);
    let route = s.submit_manual_feedback(verdicts(&[(1, true), (2, false)])).unwrap();
    assert_eq!(route, Route::BudgetExhausted);
    let st = s.state();
    assert_eq!((st.phase, st.final_reason), (Phase::Completed, Some(FinalReason::BudgetExhausted)));
    // rounds 1 and 3 tie on passes; the later one wins
    assert_eq!(st.winner_round, Some(3));
    assert_eq!(st.bundle.as_ref().unwrap().files[0].body, "print('v3')");
    assert_eq!(s.revision_counters(), (0, 2));
}

#[test]
fn abort_from_a_gate() {
    let root = tempfile::tempdir().unwrap();
    let (gw, _) = scripted_gateway(tiny_script(&[]));
    let mut s = new_session(root.path(), "tiny", SessionConfig::default(), gw, Arc::new(ScriptedRunner::new()));
    s.draft_use_cases().unwrap();
    s.abort("").unwrap();
    assert_eq!(s.state().abort_reason.as_deref(), Some("aborted by user"));
    assert_eq!(s.approve_use_cases().unwrap_err().code(), "SessionClosed");
}

#[test]
fn persistence_round_trips_and_truncation_is_reported() {
    let (_root, s) = to_manual(SessionConfig::default(), &[], Arc::new(ScriptedRunner::new()));
    let loaded = load_state(s.dir()).unwrap();
    assert_eq!(&loaded, s.state());
    assert_eq!(loaded.counters, s.state().counters);

    let log = event_log(&s);
    let text = std::fs::read_to_string(&log).unwrap();
    let cut = text.trim_end().rfind('\n').unwrap() + 20;
    std::fs::write(&log, &text[..cut]).unwrap();
    match load_state(s.dir()).unwrap_err() {
        SessionError::Load(e) => assert_eq!(e.last_good_seq, s.state().events.len() as u64 - 1),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn reload_continues_the_conversation() {
    let root = tempfile::tempdir().unwrap();
    let (gw, _) = scripted_gateway(tiny_script(&[]));
    let runner = Arc::new(ScriptedRunner::new());
    let mut s = new_session(root.path(), "tiny", SessionConfig::default(), gw, runner.clone());
    s.draft_use_cases().unwrap();
    s.approve_use_cases().unwrap();
    let dir = s.dir().to_path_buf();
    drop(s);
    let (gw, _) = scripted_gateway(tiny_script(&[])[1..].to_vec());
    let mut s = caseloop_core::session::Session::load(&dir, gw, services(runner)).unwrap();
    assert_eq!(s.run_auto().unwrap(), Phase::ManualValidation);
    let seqs: Vec<u64> = s.state().exchanges.iter().map(|e| e.sequence_no).collect();
    assert_eq!(seqs, vec![1, 2, 3]);
}

#[test]
fn replay_mismatch_leaves_state_untouched() {
    let root = tempfile::tempdir().unwrap();
    let cassette = root.path().join("c.jsonl");
    let mut s = new_session(
        root.path(),
        "tiny",
        SessionConfig::default(),
        record_gateway(&cassette, tiny_script(&[])),
        Arc::new(ScriptedRunner::new()),
    );
    s.draft_use_cases().unwrap();
    let mut other = new_session(
        &root.path().join("b"),
        "a different task",
        SessionConfig::default(),
        replay_gateway(&cassette),
        Arc::new(ScriptedRunner::new()),
    );
    let before = other.state().clone();
    assert_eq!(other.draft_use_cases().unwrap_err().code(), "ReplayMismatch");
    assert_eq!(other.state(), &before);
}
