//! The automatic testing agent: placeholder refinement, generated unit
//! tests, system start checks, and the bug-fix rounds between them. Each
//! function performs one step and returns the event describing it; the
//! session engine decides when to call which.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gateway::{ChatExchange, ChatGateway, GatewayError};
use crate::parsers::{detect_placeholders, parse_code_bundle_first_wins, CodeBundle, CodeFile, KnownModules};
use crate::prompts::{is_test_file, test_file_name, PromptLibrary, PromptPair};
use crate::runner::{ProjectRunner, RunOutcome, TestReport};
use crate::session::{EventKind, FixRound, GeneratedTest, LoopStage, RunSummary, SessionError, SessionEvent};

/// Everything a step needs besides the session state.
pub struct StepContext<'a> {
    pub gateway: &'a mut ChatGateway,
    pub prompts: &'a PromptLibrary,
    pub runner: &'a dyn ProjectRunner,
    pub known: &'a KnownModules,
    pub session_dir: &'a Path,
    pub session_id: &'a str,
}

/// Result of a generation call with at most one re-ask.
pub struct Generated<T> {
    pub value: Result<T, String>,
    pub exchanges: Vec<ChatExchange>,
}

/// Failures that describe the model's behaviour rather than a broken setup.
/// These are recorded in the round; anything else propagates.
fn recoverable(e: &GatewayError) -> bool {
    matches!(e, GatewayError::Transport { .. } | GatewayError::EmptyResponse(_))
}

/// Sends `pair`; if the answer does not parse, asks once more with the
/// parse error attached. On a gateway error, the exchanges that did complete
/// are returned alongside it.
pub fn ask<T>(
    gateway: &mut ChatGateway,
    prompts: &PromptLibrary,
    pair: &PromptPair,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Generated<T>, (GatewayError, Vec<ChatExchange>)> {
    let first = gateway.complete(&pair.to_messages()).map_err(|e| (e, Vec::new()))?;
    let answer = first.response.content.clone();
    let mut exchanges = vec![first];
    let error = match parse(&answer) {
        Ok(v) => return Ok(Generated { value: Ok(v), exchanges }),
        Err(e) => e,
    };
    let messages = match prompts.reask_messages(pair, &answer, &error) {
        Ok(m) => m,
        Err(e) => return Err((GatewayError::InvalidTranscript(e.to_string()), exchanges)),
    };
    match gateway.complete(&messages) {
        Ok(second) => {
            let value = parse(&second.response.content);
            exchanges.push(second);
            Ok(Generated { value, exchanges })
        }
        Err(e) => Err((e, exchanges)),
    }
}

/// Like [`ask`], but recoverable gateway failures are folded into the value.
pub fn ask_recording<T>(
    gateway: &mut ChatGateway,
    prompts: &PromptLibrary,
    pair: &PromptPair,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Generated<T>, SessionError> {
    match ask(gateway, prompts, pair, parse) {
        Ok(g) => Ok(g),
        Err((e, exchanges)) if recoverable(&e) => Ok(Generated { value: Err(e.to_string()), exchanges }),
        Err((e, _)) => Err(e.into()),
    }
}

/// Parses a fix or refinement answer into the files to merge. Test files in
/// the answer are ignored.
pub fn parse_update(text: &str) -> Result<CodeBundle, String> {
    let (bundle, _) = parse_code_bundle_first_wins(text).map_err(|e| e.to_string())?;
    let update = bundle.without(|f| is_test_file(&f.name));
    if update.is_empty() {
        return Err("the answer contained no source files".into());
    }
    Ok(update)
}

pub fn digest(file: &CodeFile) -> String {
    hex::encode(Sha256::digest(file.file_text().as_bytes()))
}

/// Production code shown to the model: generated tests are left out.
pub fn source_only(bundle: &CodeBundle) -> CodeBundle {
    bundle.without(|f| is_test_file(&f.name))
}

fn fallback_problem(problem: &str) -> String {
    if problem.trim().is_empty() {
        "The program failed without printing an error message.".to_string()
    } else {
        problem.to_string()
    }
}

/// One bug-fix completion: the returned files are merged into `bundle` as
/// round `next_round`.
pub fn fix_round(
    ctx: &mut StepContext<'_>,
    bundle: &CodeBundle,
    problem: &str,
    next_round: u32,
) -> Result<(FixRound, Vec<ChatExchange>), SessionError> {
    let problem = fallback_problem(problem);
    let pair = ctx.prompts.render_bugfix_prompt(&source_only(bundle), &problem)?;
    let generated = ask_recording(ctx.gateway, ctx.prompts, &pair, parse_update)?;
    let fix = match generated.value {
        Ok(update) => FixRound { problem, bundle: Some(bundle.merge(&update, next_round)), error: None },
        Err(error) => FixRound { problem, bundle: None, error: Some(error) },
    };
    Ok((fix, generated.exchanges))
}

/// Lexical scan, then one refine call when anything was found.
pub fn refinement_pass(
    ctx: &mut StepContext<'_>,
    bundle: &CodeBundle,
    next_round: u32,
) -> Result<EventKind, SessionError> {
    let findings = detect_placeholders(bundle, ctx.known);
    if findings.is_empty() {
        return Ok(EventKind::RefinementApplied { findings, bundle: None, warning: None, exchanges: Vec::new() });
    }
    let listed: Vec<String> = findings.iter().map(ToString::to_string).collect();
    let pair = ctx.prompts.render_refine_prompt(&source_only(bundle), &listed)?;
    let generated = ask_recording(ctx.gateway, ctx.prompts, &pair, parse_update)?;
    let (bundle, warning) = match generated.value {
        Ok(update) => (Some(bundle.merge(&update, next_round)), None),
        Err(e) => (None, Some(format!("refinement skipped, keeping the generated code: {e}"))),
    };
    Ok(EventKind::RefinementApplied { findings, bundle, warning, exchanges: generated.exchanges })
}

/// Source files that get a generated test file: same language as the entry
/// file, not the entry file itself, not a test.
pub fn test_targets(bundle: &CodeBundle) -> Vec<&CodeFile> {
    let Some(entry) = bundle.entry_file() else {
        return Vec::new();
    };
    bundle
        .files
        .iter()
        .filter(|f| f.name != entry.name && f.extension() == entry.extension() && !is_test_file(&f.name))
        .collect()
}

fn parse_test_file(text: &str, expected: &str) -> Result<CodeFile, String> {
    let (bundle, _) = parse_code_bundle_first_wins(text).map_err(|e| e.to_string())?;
    if let Some(f) = bundle.get(expected) {
        return Ok(f.clone());
    }
    match bundle.files.as_slice() {
        [only] => Ok(CodeFile { name: expected.to_string(), ..only.clone() }),
        _ => Err(format!("the answer does not contain `{expected}`")),
    }
}

/// Bundle plus test files, as written to disk.
pub fn with_tests(bundle: &CodeBundle, tests: &BTreeMap<String, GeneratedTest>) -> CodeBundle {
    let files = tests.values().map(|t| t.file.clone()).collect();
    bundle.merge(&CodeBundle::new(files, bundle.round), bundle.round)
}

/// Brings tests up to date with `bundle`, runs them, and asks for a fix when
/// any fail.
pub fn unit_round(
    ctx: &mut StepContext<'_>,
    bundle: &CodeBundle,
    existing: &BTreeMap<String, GeneratedTest>,
    run: u32,
    next_round: u32,
) -> Result<EventKind, SessionError> {
    let mut exchanges = Vec::new();
    let mut warnings = Vec::new();
    let mut tests = existing.clone();
    let mut written = Vec::new();
    let targets = test_targets(bundle);
    let dropped_tests: Vec<String> =
        existing.keys().filter(|t| !targets.iter().any(|f| &f.name == *t)).cloned().collect();
    for name in &dropped_tests {
        tests.remove(name);
    }
    for target in &targets {
        let target_digest = digest(target);
        if existing.get(&target.name).is_some_and(|t| t.target_digest == target_digest) {
            continue;
        }
        let expected = test_file_name(&target.name);
        let pair = ctx.prompts.render_unit_test_prompt(&source_only(bundle), &target.name)?;
        let generated = ask_recording(ctx.gateway, ctx.prompts, &pair, |t| parse_test_file(t, &expected))?;
        exchanges.extend(generated.exchanges);
        match generated.value {
            Ok(file) => {
                let t = GeneratedTest { target: target.name.clone(), target_digest, file };
                tests.insert(t.target.clone(), t.clone());
                written.push(t);
            }
            Err(e) => {
                tests.remove(&target.name);
                warnings.push(format!("no unit tests for `{}`: {e}", target.name));
            }
        }
    }
    let mut dropped_tests = dropped_tests;
    dropped_tests.extend(
        existing.keys().filter(|k| !tests.contains_key(*k) && !dropped_tests.contains(k)).cloned().collect::<Vec<_>>(),
    );
    if tests.is_empty() {
        warnings.push("no unit tests to run".to_string());
    }
    let ws = ctx.runner.materialize(&with_tests(bundle, &tests), ctx.session_dir, ctx.session_id, bundle.round)?;
    let files: Vec<String> = tests.values().map(|t| t.file.name.clone()).collect();
    let report = ctx.runner.run_tests(&ws, &files)?;
    let fix = if report.all_passed() {
        None
    } else {
        let (fix, ex) = fix_round(ctx, bundle, &report.problem_text(), next_round)?;
        exchanges.extend(ex);
        Some(fix)
    };
    Ok(EventKind::UnitTestRound { run, tests: written, dropped_tests, report, fix, warnings, exchanges })
}

/// Starts the program; on failure asks for a fix. Raw output is written to
/// `logs/<log_stem>.stdout|.stderr` under the session directory.
pub fn system_round(
    ctx: &mut StepContext<'_>,
    bundle: &CodeBundle,
    tests: &BTreeMap<String, GeneratedTest>,
    run: u32,
    next_round: u32,
    log_stem: &str,
) -> Result<(EventKind, RunOutcome), SessionError> {
    let ws = ctx.runner.materialize(&with_tests(bundle, tests), ctx.session_dir, ctx.session_id, bundle.round)?;
    let outcome = ctx.runner.run_entry(&ws)?;
    write_logs(ctx.session_dir, log_stem, &outcome)?;
    let summary = RunSummary::from(&outcome);
    let (fix, exchanges) = if outcome.status.is_clean() {
        (None, Vec::new())
    } else {
        let (fix, ex) = fix_round(ctx, bundle, outcome.error_excerpt.as_deref().unwrap_or(""), next_round)?;
        (Some(fix), ex)
    };
    Ok((EventKind::SystemTestRound { run, outcome: summary, fix, exchanges }, outcome))
}

fn write_logs(session_dir: &Path, stem: &str, outcome: &RunOutcome) -> Result<(), SessionError> {
    let dir = session_dir.join("logs");
    let io = |e: std::io::Error| SessionError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(&dir).map_err(io)?;
    std::fs::write(dir.join(format!("{stem}.stdout")), &outcome.stdout).map_err(io)?;
    std::fs::write(dir.join(format!("{stem}.stderr")), &outcome.stderr).map_err(io)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopKind {
    AllPassed,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum LoopReport {
    Unit(TestReport),
    System(RunSummary),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// The run whose failure prompted the fix.
    pub run: u32,
    pub problem: String,
    /// Round of the bundle the fix produced, if it produced one.
    pub bundle_round: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopOutcome {
    pub kind: LoopKind,
    /// Test runs (unit) or start attempts (system).
    pub rounds_used: u32,
    pub final_report: LoopReport,
    pub history: Vec<HistoryEntry>,
}

impl LoopOutcome {
    /// Summarizes the latest loop of `stage` recorded in `events`, if that
    /// loop has finished.
    pub fn from_events(events: &[SessionEvent], stage: LoopStage) -> Option<LoopOutcome> {
        let start = events.iter().rposition(|e| matches!(e.kind, EventKind::BundleProduced { .. })).unwrap_or(0);
        let mut history = Vec::new();
        let mut rounds_used = 0;
        let mut last: Option<LoopReport> = None;
        let mut kind = None;
        for e in &events[start..] {
            match (&e.kind, stage) {
                (EventKind::UnitTestRound { run, report, fix, .. }, LoopStage::Unit) => {
                    rounds_used = *run;
                    last = Some(LoopReport::Unit(report.clone()));
                    match fix {
                        None => kind = Some(LoopKind::AllPassed),
                        Some(f) => history.push(entry(*run, f)),
                    }
                }
                (EventKind::SystemTestRound { run, outcome, fix, .. }, LoopStage::System) => {
                    rounds_used = *run;
                    last = Some(LoopReport::System(outcome.clone()));
                    match fix {
                        None => kind = Some(LoopKind::AllPassed),
                        Some(f) => history.push(entry(*run, f)),
                    }
                }
                (EventKind::AutoLoopExhausted { stage: s, .. }, _) if *s == stage => kind = Some(LoopKind::Exhausted),
                _ => {}
            }
        }
        Some(LoopOutcome { kind: kind?, rounds_used, final_report: last?, history })
    }
}

fn entry(run: u32, fix: &FixRound) -> HistoryEntry {
    HistoryEntry { run, problem: fix.problem.clone(), bundle_round: fix.bundle.as_ref().map(|b| b.round) }
}

/// One-line description of where a loop stopped.
pub fn exhaustion_summary(stage: LoopStage, unit: Option<&TestReport>, system: Option<&RunSummary>) -> String {
    match stage {
        LoopStage::Unit => match unit {
            Some(r) => format!("unit tests still failing: {} of {} passed", r.passed, r.total),
            None => "unit tests still failing".to_string(),
        },
        LoopStage::System => match system.and_then(|s| s.error_excerpt.as_deref()) {
            Some(e) => format!("program still fails to start: {}", e.lines().last().unwrap_or(e)),
            None => "program still fails to start".to_string(),
        },
    }
}
