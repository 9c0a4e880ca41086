//! Terminal prompts for the human gates, used when no UI is attached.

use std::io::{BufRead, Write};

use caseloop_core::bench::{self, BenchError, BenchmarkTask, Judgement, Review, Verdict, VerdictMode, VerdictSource};
use caseloop_core::parsers::{UseCaseEdit, UseCaseSet};
use caseloop_core::session::{ManualFeedback, Phase, Session, UseCaseVerdict};

use crate::ops::{Action, App, OpError};

pub struct Prompter<R, W> {
    input: R,
    output: W,
}

fn io_err(e: std::io::Error) -> OpError {
    OpError::Io(e.to_string())
}

const EDIT_HELP: &str =
    "  m <id> <text>   replace use case <id>\n  d <id>          delete use case <id>\n  + <text>        add a use case";

/// Parses one edit command line; `None` when the line is not an edit.
pub fn parse_edit(line: &str) -> Option<Result<UseCaseEdit, String>> {
    let line = line.trim();
    let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    let rest = rest.trim();
    let id = |s: &str| s.parse::<u32>().map_err(|_| format!("`{s}` is not a use-case number"));
    match cmd {
        "+" if rest.is_empty() => Some(Err("nothing to add".into())),
        "+" => Some(Ok(UseCaseEdit::Add { description: rest.to_string() })),
        "d" => Some(id(rest).map(|id| UseCaseEdit::Delete { id })),
        "m" => {
            let (num, text) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            if text.trim().is_empty() {
                return Some(Err("usage: m <id> <text>".into()));
            }
            Some(id(num).map(|id| UseCaseEdit::Modify { id, description: text.trim().to_string() }))
        }
        _ => None,
    }
}

impl<R: BufRead, W: Write> Prompter<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { input, output }
    }

    pub fn into_output(self) -> W {
        self.output
    }

    pub fn say(&mut self, text: &str) -> Result<(), OpError> {
        writeln!(self.output, "{text}").map_err(io_err)
    }

    /// Reads one line; `None` at end of input.
    fn line(&mut self, prompt: &str) -> Result<Option<String>, OpError> {
        write!(self.output, "{prompt}").map_err(io_err)?;
        self.output.flush().map_err(io_err)?;
        let mut buf = String::new();
        if self.input.read_line(&mut buf).map_err(io_err)? == 0 {
            return Ok(None);
        }
        Ok(Some(buf.trim_end_matches(['\r', '\n']).to_string()))
    }

    fn yes_no(&mut self, prompt: &str) -> Result<bool, OpError> {
        loop {
            match self.line(prompt)?.as_deref().map(str::trim) {
                Some("y" | "yes") => return Ok(true),
                Some("n" | "no") => return Ok(false),
                None => return Err(OpError::InvalidInput("input ended".into())),
                Some(_) => self.say("answer y or n")?,
            }
        }
    }

    /// Lines up to the first empty one.
    fn block(&mut self, prompt: &str) -> Result<String, OpError> {
        self.say(prompt)?;
        let mut lines = Vec::new();
        while let Some(line) = self.line("")? {
            if line.is_empty() {
                break;
            }
            lines.push(line);
        }
        Ok(lines.join("\n"))
    }

    fn edits(&mut self, prompt: &str, finish: &str) -> Result<Vec<UseCaseEdit>, OpError> {
        let mut edits = Vec::new();
        loop {
            let Some(line) = self.line(prompt)? else { return Ok(edits) };
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed == finish {
                return Ok(edits);
            }
            match parse_edit(trimmed) {
                Some(Ok(edit)) => edits.push(edit),
                Some(Err(msg)) => self.say(&msg)?,
                None => self.say(EDIT_HELP)?,
            }
        }
    }

    pub fn show_use_cases(&mut self, use_cases: &UseCaseSet) -> Result<(), OpError> {
        for (id, uc) in use_cases.iter() {
            self.say(&format!("  {id}. {}", uc.description))?;
        }
        Ok(())
    }

    /// The use-case review gate: edit commands, then `a` to approve or
    /// `q <reason>` to abort.
    pub fn review_use_cases(&mut self, use_cases: &UseCaseSet) -> Result<Review, OpError> {
        self.say("Use cases:")?;
        self.show_use_cases(use_cases)?;
        self.say(&format!("{EDIT_HELP}\n  a               approve\n  q [reason]      abort"))?;
        let mut edits = Vec::new();
        loop {
            let Some(line) = self.line("review> ")? else {
                return Err(OpError::InvalidInput("input ended before approval".into()));
            };
            let trimmed = line.trim();
            match trimmed {
                "a" => return Ok(Review::Approve(edits)),
                "q" => return Ok(Review::Abort(String::new())),
                _ if trimmed.starts_with("q ") => return Ok(Review::Abort(trimmed[2..].trim().to_string())),
                _ => match parse_edit(trimmed) {
                    Some(Ok(edit)) => edits.push(edit),
                    Some(Err(msg)) => self.say(&msg)?,
                    None => self.say(EDIT_HELP)?,
                },
            }
        }
    }

    /// Manual validation of the running system, one use case at a time.
    pub fn collect_feedback(&mut self, use_cases: &UseCaseSet) -> Result<ManualFeedback, OpError> {
        self.say("Start the program and check each use case.")?;
        let mut fb = ManualFeedback::default();
        for (id, uc) in use_cases.iter() {
            let pass = self.yes_no(&format!("{id}. {} passes? [y/n] ", uc.description))?;
            fb.per_use_case.insert(id, if pass { UseCaseVerdict::Pass } else { UseCaseVerdict::Fail });
        }
        if fb.per_use_case.values().all(|v| *v == UseCaseVerdict::Pass) {
            return Ok(fb);
        }
        let error = self.block("Paste the error message, then an empty line (just an empty line to skip):")?;
        if !error.trim().is_empty() {
            fb.error_message = Some(error);
            return Ok(fb);
        }
        self.say(&format!("Revise the use cases instead (empty line to finish):\n{EDIT_HELP}"))?;
        let edits = self.edits("revise> ", ".")?;
        let (added, revised): (Vec<_>, Vec<_>) = edits.into_iter().partition(|e| matches!(e, UseCaseEdit::Add { .. }));
        if !revised.is_empty() {
            fb.revised_use_cases = Some(revised);
        }
        if !added.is_empty() {
            fb.new_use_cases = Some(
                added
                    .into_iter()
                    .filter_map(|e| match e {
                        UseCaseEdit::Add { description } => Some(description),
                        _ => None,
                    })
                    .collect(),
            );
        }
        Ok(fb)
    }
}

/// Walks a session through every gate from the terminal until it ends.
pub fn drive_session<R: BufRead, W: Write>(app: &App, id: &str, p: &mut Prompter<R, W>) -> Result<Phase, OpError> {
    loop {
        let view = app.view(id)?;
        match view.phase {
            Phase::Completed | Phase::Aborted => {
                p.say(&format!("session {id} is {}", view.phase))?;
                return Ok(view.phase);
            }
            Phase::UseCaseReview => {
                let use_cases = view.use_cases.unwrap_or_default();
                match p.review_use_cases(&use_cases)? {
                    Review::Approve(edits) => {
                        if !edits.is_empty() {
                            app.perform(id, Action::EditUseCases { edits })?;
                        }
                        app.perform(id, Action::ApproveUseCases)?;
                    }
                    Review::Abort(reason) => {
                        app.perform(id, Action::Abort { reason })?;
                    }
                }
            }
            Phase::DesignReview => {
                p.say("System design:")?;
                for f in view.design.iter().flat_map(|d| d.files.iter()) {
                    p.say(&format!("  {}: {}", f.filename, f.responsibility))?;
                }
                if p.yes_no("approve the design? [y/n] ")? {
                    app.perform(id, Action::ApproveDesign)?;
                } else {
                    app.perform(id, Action::Abort { reason: "design rejected".into() })?;
                }
            }
            Phase::ManualValidation => {
                if let Some(bundle) = &view.bundle {
                    p.say(&format!(
                        "Code round {} is ready in {}",
                        bundle.round,
                        app.sessions_dir().join(id).display()
                    ))?;
                }
                let use_cases = view.use_cases.unwrap_or_default();
                let feedback = p.collect_feedback(&use_cases)?;
                let result = app.perform(id, Action::Feedback { feedback })?;
                p.say(&format!("-> {}", result.phase))?;
            }
            phase => {
                p.say(&format!("running automatic phases from {phase}..."))?;
                let result = app.perform(id, Action::RunAuto)?;
                p.say(&format!("-> {}", result.phase))?;
            }
        }
    }
}

/// Benchmark verdicts typed in by a person.
pub struct InteractiveVerdicts<R, W> {
    pub prompter: Prompter<R, W>,
}

impl<R: BufRead, W: Write> VerdictSource for InteractiveVerdicts<R, W> {
    fn mode(&self) -> VerdictMode {
        VerdictMode::Human
    }

    fn review_use_cases(&mut self, _task: &BenchmarkTask, use_cases: &UseCaseSet) -> Result<Review, BenchError> {
        self.prompter.review_use_cases(use_cases).map_err(|e| BenchError::InvalidInput(e.to_string()))
    }

    fn judge(&mut self, task: &BenchmarkTask, session: &Session) -> Result<Judgement, BenchError> {
        let p = &mut self.prompter;
        let wrap = |e: OpError| BenchError::InvalidInput(e.to_string());
        p.say(&format!("Task {}: check the reference use cases against {}", task.task_id, session.dir().display()))
            .map_err(wrap)?;
        let mut references = Vec::new();
        for (i, uc) in task.reference_use_cases.iter().enumerate() {
            let pass = p.yes_no(&format!("R{}. {uc} passes? [y/n] ", i + 1)).map_err(wrap)?;
            references.push(if pass { Verdict::Pass } else { Verdict::Fail });
        }
        let mut feedback = bench::feedback_for(task, session, &references);
        if feedback.error_message.is_some() {
            let pasted = p
                .block("Paste the error message, then an empty line (just an empty line to describe the failing use cases):")
                .map_err(wrap)?;
            if !pasted.trim().is_empty() {
                feedback.error_message = Some(pasted);
            }
        }
        Ok(Judgement { references, feedback })
    }
}
