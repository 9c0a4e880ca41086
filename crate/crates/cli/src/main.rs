use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use caseloop_cli::interactive::{drive_session, InteractiveVerdicts, Prompter};
use caseloop_cli::ops::{Action, App, OpError};
use caseloop_cli::{AppConfig, Overrides};
use caseloop_core::bench::{self, best_of, BenchmarkTask, CheckedVerdicts, EvalRecord, ReportFormat, VerdictSource};
use caseloop_core::gateway::GatewayMode;
use caseloop_core::parsers::{parse_design, UseCaseEdit};
use caseloop_core::session::{ManualFeedback, Phase, UseCaseVerdict};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Human-in-the-loop software development sessions and benchmark runs.
#[derive(Parser)]
#[command(name = "caseloop", version)]
struct Cli {
    /// Config file (TOML).
    #[arg(long, global = true, env = "CASELOOP_CONFIG")]
    config: Option<PathBuf>,
    /// Backend profile from the config file.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Replay cassette; implies `--mode replay` unless a mode is given.
    #[arg(long, global = true)]
    cassette: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[arg(long, global = true)]
    sessions_dir: Option<PathBuf>,
    /// Print results as JSON.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Live,
    Record,
    Replay,
}

impl From<Mode> for GatewayMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Live => GatewayMode::Live,
            Mode::Record => GatewayMode::Record,
            Mode::Replay => GatewayMode::Replay,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    #[command(subcommand)]
    Session(SessionCmd),
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Subcommand)]
enum SessionCmd {
    /// Create a session for a task description.
    New {
        task: String,
        /// Stop for design review before coding.
        #[arg(long)]
        design_review: bool,
        #[arg(long)]
        max_auto_iterations: Option<u32>,
        #[arg(long)]
        max_manual_rounds: Option<u32>,
    },
    List,
    Show {
        id: String,
    },
    /// Run one automatic step.
    Advance {
        id: String,
    },
    /// Run automatic steps until a human gate or the end.
    RunAuto {
        id: String,
    },
    /// Edit the drafted use cases.
    EditUsecases {
        id: String,
        #[command(flatten)]
        edits: EditArgs,
    },
    /// Approve the use cases or design the session is waiting on.
    Approve {
        id: String,
    },
    /// Show the design, or replace it with `--set`.
    Design {
        id: String,
        /// JSON file mapping file names to responsibilities.
        #[arg(long)]
        set: Option<PathBuf>,
    },
    /// Submit manual-validation feedback.
    Feedback {
        id: String,
        #[command(flatten)]
        feedback: FeedbackArgs,
    },
    Abort {
        id: String,
        #[arg(long, default_value = "")]
        reason: String,
    },
    /// Events after a sequence number.
    Events {
        id: String,
        #[arg(long, default_value_t = 0)]
        after: u64,
    },
    /// List the current code files, or print one.
    Files {
        id: String,
        name: Option<String>,
    },
    /// List run logs, or print one.
    Logs {
        id: String,
        name: Option<String>,
    },
    /// Write the delivered code to a directory.
    Export {
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Walk the session through its gates at the terminal.
    Interactive {
        id: String,
    },
}

#[derive(Args, Default)]
struct EditArgs {
    /// `ID=TEXT`: replace a use case.
    #[arg(long = "modify", value_name = "ID=TEXT")]
    modify: Vec<String>,
    #[arg(long = "delete", value_name = "ID")]
    delete: Vec<u32>,
    #[arg(long = "add", value_name = "TEXT")]
    add: Vec<String>,
    /// JSON list of edits.
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Args)]
struct FeedbackArgs {
    #[arg(long, value_delimiter = ',')]
    pass: Vec<u32>,
    #[arg(long, value_delimiter = ',')]
    fail: Vec<u32>,
    /// Error message observed while testing.
    #[arg(long, conflicts_with = "error_file")]
    error: Option<String>,
    #[arg(long)]
    error_file: Option<PathBuf>,
    /// `ID=TEXT`: a revised use case.
    #[arg(long = "revise", value_name = "ID=TEXT")]
    revise: Vec<String>,
    /// A new use case.
    #[arg(long = "add", value_name = "TEXT")]
    add: Vec<String>,
    /// The whole submission as JSON.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Ask at the terminal.
    #[arg(long)]
    interactive: bool,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Validate a suite file and list its tasks.
    Load { suite: Option<PathBuf> },
    /// Drive suite tasks and append their records.
    Run {
        /// Suite file; the bundled sample suite when omitted.
        suite: Option<PathBuf>,
        /// Scripted checks (JSON); without it verdicts are asked at the terminal.
        #[arg(long)]
        checks: Option<PathBuf>,
        /// Only these task ids.
        #[arg(long = "task")]
        tasks: Vec<String>,
        /// Trials per task; the best one is recorded.
        #[arg(long, default_value_t = 1)]
        trials: u32,
        /// Records file to append to.
        #[arg(long)]
        records: PathBuf,
    },
    /// Aggregate a records file.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

fn split_pair(s: &str) -> Result<(u32, String)> {
    let (id, text) = s.split_once('=').with_context(|| format!("expected ID=TEXT, got `{s}`"))?;
    let id = id.trim().parse().with_context(|| format!("`{id}` is not a use-case number"))?;
    Ok((id, text.trim().to_string()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl EditArgs {
    fn into_edits(self) -> Result<Vec<UseCaseEdit>> {
        let mut edits: Vec<UseCaseEdit> = match &self.file {
            Some(path) => read_json(path)?,
            None => Vec::new(),
        };
        for m in &self.modify {
            let (id, description) = split_pair(m)?;
            edits.push(UseCaseEdit::Modify { id, description });
        }
        edits.extend(self.delete.iter().map(|&id| UseCaseEdit::Delete { id }));
        edits.extend(self.add.into_iter().map(|description| UseCaseEdit::Add { description }));
        Ok(edits)
    }
}

impl FeedbackArgs {
    fn into_feedback(self) -> Result<ManualFeedback> {
        let mut fb: ManualFeedback = match &self.file {
            Some(path) => read_json(path)?,
            None => ManualFeedback::default(),
        };
        fb.per_use_case.extend(self.pass.iter().map(|&id| (id, UseCaseVerdict::Pass)));
        fb.per_use_case.extend(self.fail.iter().map(|&id| (id, UseCaseVerdict::Fail)));
        if let Some(path) = &self.error_file {
            fb.error_message =
                Some(std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?);
        }
        if let Some(e) = self.error {
            fb.error_message = Some(e);
        }
        if !self.revise.is_empty() {
            let revised = fb.revised_use_cases.get_or_insert_with(Vec::new);
            for r in &self.revise {
                let (id, description) = split_pair(r)?;
                revised.push(UseCaseEdit::Modify { id, description });
            }
        }
        if !self.add.is_empty() {
            fb.new_use_cases.get_or_insert_with(Vec::new).extend(self.add);
        }
        Ok(fb)
    }
}

struct Out {
    json: bool,
}

impl Out {
    fn emit<T: serde::Serialize>(&self, value: &T, text: impl FnOnce() -> String) -> Result<()> {
        if self.json {
            println!("{}", serde_json::to_string_pretty(value)?);
        } else {
            println!("{}", text());
        }
        Ok(())
    }
}

fn stdin_prompter() -> Prompter<io::StdinLock<'static>, io::Stdout> {
    Prompter::new(io::stdin().lock(), io::stdout())
}

fn perform(app: &App, out: &Out, id: &str, action: Action) -> Result<()> {
    let result = app.perform(id, action)?;
    out.emit(&result, || match &result.route {
        Some(route) => format!("{id}: {} (route: {})", result.phase, serde_json::to_string(route).unwrap_or_default()),
        None => format!("{id}: {}", result.phase),
    })
}

fn session(app: &App, out: &Out, cmd: SessionCmd) -> Result<()> {
    match cmd {
        SessionCmd::New { task, design_review, max_auto_iterations, max_manual_rounds } => {
            let mut config = app.config.session.clone();
            config.design_review_enabled |= design_review;
            if let Some(n) = max_auto_iterations {
                config.max_auto_iterations = n;
            }
            if let Some(n) = max_manual_rounds {
                config.max_manual_rounds = n;
            }
            config.validate().map_err(OpError::Config)?;
            let view = app.create(&task, Some(config))?;
            out.emit(&view, || format!("{} {}", view.id, view.phase))
        }
        SessionCmd::List => {
            let list = app.list()?;
            out.emit(&list, || {
                list.iter()
                    .map(|s| format!("{}  {:<16} {}", s.id, s.phase.to_string(), s.task_prompt))
                    .collect::<Vec<_>>()
                    .join("\n")
            })
        }
        SessionCmd::Show { id } => {
            let v = app.view(&id)?;
            out.emit(&v, || {
                let mut lines = vec![
                    format!("session   {}", v.id),
                    format!("task      {}", v.task_prompt),
                    format!("phase     {}", v.phase),
                    format!("revisions h1={} h2={}", v.h1, v.h2),
                    format!(
                        "tokens    {} (prompt {}, completion {})",
                        v.tokens.total_tokens, v.tokens.prompt_tokens, v.tokens.completion_tokens
                    ),
                ];
                if let Some(u) = &v.use_cases {
                    lines.push("use cases".into());
                    lines.extend(u.iter().map(|(id, uc)| format!("  {id}. {}", uc.description)));
                }
                if let Some(b) = &v.bundle {
                    let names: Vec<_> = b.files.iter().map(|f| f.name.as_str()).collect();
                    lines.push(format!("code      round {}: {}", b.round, names.join(", ")));
                }
                if let Some(r) = &v.last_unit_report {
                    lines.push(format!("unit      {}/{} passed", r.passed, r.total));
                }
                if let Some(s) = &v.last_system {
                    lines.push(format!("start     {:?}", s.status));
                }
                lines.extend(v.warnings.iter().map(|w| format!("warning   {w}")));
                lines.join("\n")
            })
        }
        SessionCmd::Advance { id } => perform(app, out, &id, Action::Advance),
        SessionCmd::RunAuto { id } => perform(app, out, &id, Action::RunAuto),
        SessionCmd::EditUsecases { id, edits } => {
            let edits = edits.into_edits()?;
            if edits.is_empty() {
                bail!("no edits given; use --modify, --delete, --add or --file");
            }
            perform(app, out, &id, Action::EditUseCases { edits })
        }
        SessionCmd::Approve { id } => {
            let action = match app.view(&id)?.phase {
                Phase::DesignReview => Action::ApproveDesign,
                _ => Action::ApproveUseCases,
            };
            perform(app, out, &id, action)
        }
        SessionCmd::Design { id, set: Some(path) } => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let parsed = parse_design(&text).map_err(|e| OpError::InvalidInput(e.to_string()))?;
            perform(app, out, &id, Action::EditDesign { design: parsed.design })
        }
        SessionCmd::Design { id, set: None } => {
            let v = app.view(&id)?;
            let design = v.design.unwrap_or_default();
            out.emit(&design, || design.to_prompt_json())
        }
        SessionCmd::Feedback { id, feedback } => {
            let feedback = if feedback.interactive {
                let use_cases = app.view(&id)?.use_cases.unwrap_or_default();
                stdin_prompter().collect_feedback(&use_cases)?
            } else {
                feedback.into_feedback()?
            };
            perform(app, out, &id, Action::Feedback { feedback })
        }
        SessionCmd::Abort { id, reason } => perform(app, out, &id, Action::Abort { reason }),
        SessionCmd::Events { id, after } => {
            let events = app.events_after(&id, after)?;
            out.emit(&events, || {
                events.iter().map(|e| format!("{:>4} {}", e.seq, e.kind.name())).collect::<Vec<_>>().join("\n")
            })
        }
        SessionCmd::Files { id, name: None } => {
            let tree = app.files(&id)?;
            out.emit(&tree, || {
                tree.files
                    .iter()
                    .map(|f| format!("{:>8}  {}{}", f.bytes, f.name, if f.test { "  (test)" } else { "" }))
                    .collect::<Vec<_>>()
                    .join("\n")
            })
        }
        SessionCmd::Files { id, name: Some(name) } => {
            print!("{}", app.file(&id, &name)?);
            Ok(())
        }
        SessionCmd::Logs { id, name: None } => {
            let names = app.logs(&id)?;
            out.emit(&names, || names.join("\n"))
        }
        SessionCmd::Logs { id, name: Some(name) } => {
            print!("{}", app.log(&id, &name)?);
            Ok(())
        }
        SessionCmd::Export { id, out: dir } => {
            let written = app.export(&id, &dir)?;
            out.emit(&written, || format!("wrote {} files to {}", written.len(), dir.display()))
        }
        SessionCmd::Interactive { id } => {
            let phase = drive_session(app, &id, &mut stdin_prompter())?;
            if phase == Phase::Completed {
                Ok(())
            } else {
                bail!("session ended {phase}")
            }
        }
    }
}

fn select(tasks: Vec<BenchmarkTask>, wanted: &[String]) -> Result<Vec<BenchmarkTask>> {
    if wanted.is_empty() {
        return Ok(tasks);
    }
    wanted
        .iter()
        .map(|id| {
            tasks.iter().find(|t| &t.task_id == id).cloned().with_context(|| format!("no task `{id}` in the suite"))
        })
        .collect()
}

fn bench_cmd(app: &App, out: &Out, cmd: BenchCmd) -> Result<()> {
    match cmd {
        BenchCmd::Load { suite } => {
            let tasks = app.bench_tasks(suite.as_deref())?;
            out.emit(&tasks, || {
                tasks
                    .iter()
                    .map(|t| {
                        format!("{:<20} {} ({} reference use cases)", t.task_id, t.name, t.reference_use_cases.len())
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            })
        }
        BenchCmd::Run { suite, checks, tasks, trials, records } => {
            if trials == 0 {
                bail!("--trials must be at least 1");
            }
            let tasks = select(app.bench_tasks(suite.as_deref())?, &tasks)?;
            let mut source: Box<dyn VerdictSource> = match &checks {
                Some(path) => Box::new(read_json::<CheckedVerdicts>(path)?),
                None => Box::new(InteractiveVerdicts { prompter: stdin_prompter() }),
            };
            let mut kept = Vec::new();
            for task in &tasks {
                let mut runs: Vec<EvalRecord> = Vec::new();
                for trial in 0..trials {
                    let driven = app.bench_drive(task, trial, source.as_mut())?;
                    tracing::info!(task = %task.task_id, trial, session = %driven.session_id, pass_rate = driven.record.pass_rate);
                    runs.push(driven.record);
                }
                let best = best_of(&runs).expect("at least one trial").clone();
                bench::append_record(&records, &best)?;
                eprintln!("{}: {}/{} passed", best.task_id, best.passed(), best.total());
                kept.push(best);
            }
            let report = bench::aggregate(&kept)?;
            let text =
                bench::render_report(&report, if out.json { ReportFormat::Structured } else { ReportFormat::Table })?;
            print!("{text}");
            Ok(())
        }
        BenchCmd::Report { input, format, out: path } => {
            let records = bench::read_records(&input)?;
            let report = bench::aggregate(&records)?;
            let format = match format {
                Format::Table => ReportFormat::Table,
                Format::Json => ReportFormat::Structured,
            };
            match path {
                Some(path) => bench::export_report(&report, &path, format)?,
                None => print!("{}", bench::render_report(&report, format)?),
            }
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        profile: cli.profile,
        cassette: cli.cassette,
        mode: cli.mode.map(Into::into),
        sessions_dir: cli.sessions_dir,
    };
    let config = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    let config = config.resolve(&overrides)?;
    let out = Out { json: cli.json };
    match cli.command {
        Command::Session(cmd) => session(&App::new(config), &out, cmd),
        Command::Bench(cmd) => bench_cmd(&App::new(config), &out, cmd),
        Command::Serve { bind } => {
            let bind = bind.unwrap_or_else(|| config.bind.clone());
            let token = std::env::var(&config.api_token_env).ok().filter(|t| !t.is_empty());
            let app = Arc::new(App::new(config));
            tokio::runtime::Runtime::new()?.block_on(caseloop_cli::api::serve(app, &bind, token))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("CASELOOP_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let stderr = &mut io::stderr();
            match err.downcast_ref::<OpError>() {
                Some(op) => {
                    let _ = writeln!(stderr, "error[{}]: {op}", op.code());
                    if let Some(hint) = op.hint() {
                        let _ = writeln!(stderr, "hint: {hint}");
                    }
                }
                None => {
                    let _ = writeln!(stderr, "error: {err:#}");
                }
            }
            ExitCode::FAILURE
        }
    }
}
