//! Prompt templates and their rendering. Every message sent to the model is
//! produced here.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::gateway::ChatMessage;
use crate::parsers::python::{function_defs, imports};
use crate::parsers::{CodeBundle, SystemDesign, UseCaseSet};

/// Prefix of generated unit-test file names.
pub const TEST_FILE_PREFIX: &str = "test_";

pub const DEFAULT_LANGUAGE: &str = "Python";

pub const DEFAULT_GUI_REQUIREMENT: &str = "The software should be equipped with graphical user interface (GUI) so that user can visually and graphically use it; so you must choose a GUI framework (e.g., in Python, you can implement GUI via tkinter, Pygame, Flexx, PyGUI, etc,).";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    UseCases,
    Design,
    Codegen,
    Refine,
    UnitTests,
    Bugfix,
    Reask,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        TemplateId::UseCases,
        TemplateId::Design,
        TemplateId::Codegen,
        TemplateId::Refine,
        TemplateId::UnitTests,
        TemplateId::Bugfix,
        TemplateId::Reask,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::UseCases => "use_cases",
            TemplateId::Design => "design",
            TemplateId::Codegen => "codegen",
            TemplateId::Refine => "refine",
            TemplateId::UnitTests => "unit_tests",
            TemplateId::Bugfix => "bugfix",
            TemplateId::Reask => "reask",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl std::fmt::Display for TemplateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Nothing to ask the model; the caller skips the call.
    #[error("nothing to render")]
    NoOp,
    #[error("template error: {0}")]
    Template(String),
}

impl PromptError {
    pub fn code(&self) -> &'static str {
        match self {
            PromptError::InvalidInput(_) => "InvalidInput",
            PromptError::NoOp => "NoOp",
            PromptError::Template(_) => "TemplateError",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system_message: String,
    pub user_message: String,
    pub template_id: TemplateId,
    pub version: u32,
    pub placeholders_filled: BTreeMap<String, String>,
}

impl PromptPair {
    /// System message first, omitted when empty.
    pub fn to_messages(&self) -> Vec<ChatMessage> {
        let mut out = Vec::with_capacity(2);
        if !self.system_message.is_empty() {
            out.push(ChatMessage::system(self.system_message.clone()));
        }
        out.push(ChatMessage::user(self.user_message.clone()));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub id: TemplateId,
    pub version: u32,
    pub system: String,
    pub user: String,
}

static PLACEHOLDER: Lazy<Regex> = Lazy::new(|| Regex::new(r"\{([a-z_][a-z0-9_]*)\}").unwrap());

/// Names of the `{name}` slots in `text`, in first-seen order.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    PLACEHOLDER.captures_iter(text).map(|c| c[1].to_string()).filter(|n| seen.insert(n.clone())).collect()
}

/// Single-pass substitution: inserted values are never rescanned.
fn substitute(text: &str, values: &BTreeMap<String, String>) -> Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for caps in PLACEHOLDER.captures_iter(text) {
        let whole = caps.get(0).unwrap();
        let value = values.get(&caps[1]).ok_or_else(|| format!("no value for `{{{}}}`", &caps[1]))?;
        out.push_str(&text[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

impl Template {
    /// Header lines (`# template: id`, `# version: n`), then `--- system ---`
    /// and `--- user ---` sections. The system section is optional.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut id = None;
        let mut version = None;
        let mut sections: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        let mut current: Option<&str> = None;
        for line in text.lines() {
            if let Some(name) = line.strip_prefix("--- ").and_then(|l| l.strip_suffix(" ---")) {
                if name != "system" && name != "user" {
                    return Err(PromptError::Template(format!("unknown section `{name}`")));
                }
                if sections.insert(name, Vec::new()).is_some() {
                    return Err(PromptError::Template(format!("section `{name}` appears twice")));
                }
                current = Some(name);
                continue;
            }
            match current {
                Some(name) => sections.get_mut(name).unwrap().push(line),
                None => {
                    let header = line.trim_start_matches('#').trim();
                    if let Some(v) = header.strip_prefix("template:") {
                        id = TemplateId::parse(v.trim());
                        if id.is_none() {
                            return Err(PromptError::Template(format!("unknown template id `{}`", v.trim())));
                        }
                    } else if let Some(v) = header.strip_prefix("version:") {
                        version = Some(
                            v.trim()
                                .parse()
                                .map_err(|_| PromptError::Template(format!("bad version `{}`", v.trim())))?,
                        );
                    }
                }
            }
        }
        let id = id.ok_or_else(|| PromptError::Template("missing `template:` header".into()))?;
        let version = version.ok_or_else(|| PromptError::Template(format!("{id}: missing `version:` header")))?;
        let join = |name: &str| sections.get(name).map(|lines| lines.join("\n"));
        let user = join("user").ok_or_else(|| PromptError::Template(format!("{id}: missing user section")))?;
        Ok(Template { id, version, system: join("system").unwrap_or_default(), user })
    }

    pub fn placeholders(&self) -> Vec<String> {
        let mut names = placeholders(&self.system);
        for n in placeholders(&self.user) {
            if !names.contains(&n) {
                names.push(n);
            }
        }
        names
    }

    fn render(&self, values: BTreeMap<String, String>) -> Result<PromptPair, PromptError> {
        let err = |e: String| PromptError::Template(format!("{}: {e}", self.id));
        let system_message = substitute(&self.system, &values).map_err(err)?;
        let user_message = substitute(&self.user, &values).map_err(err)?;
        let used = self.placeholders();
        let placeholders_filled = values.into_iter().filter(|(k, _)| used.contains(k)).collect();
        Ok(PromptPair {
            system_message,
            user_message,
            template_id: self.id,
            version: self.version,
            placeholders_filled,
        })
    }
}

/// Per-task knobs of the code generation prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodegenOptions {
    pub language: String,
    /// Sentence placed after the architecture instruction; empty drops it.
    pub gui_requirement: String,
}

impl Default for CodegenOptions {
    fn default() -> Self {
        Self { language: DEFAULT_LANGUAGE.into(), gui_requirement: DEFAULT_GUI_REQUIREMENT.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    templates: BTreeMap<TemplateId, Template>,
    output_format: String,
}

const BUILTIN: [&str; 7] = [
    include_str!("../../templates/use_cases.txt"),
    include_str!("../../templates/design.txt"),
    include_str!("../../templates/codegen.txt"),
    include_str!("../../templates/refine.txt"),
    include_str!("../../templates/unit_tests.txt"),
    include_str!("../../templates/bugfix.txt"),
    include_str!("../../templates/reask.txt"),
];
const BUILTIN_OUTPUT_FORMAT: &str = include_str!("../../templates/output_format.txt");

impl PromptLibrary {
    pub fn builtin() -> Self {
        let sources: Vec<String> = BUILTIN.iter().map(|s| s.to_string()).collect();
        Self::from_sources(&sources, BUILTIN_OUTPUT_FORMAT).expect("builtin templates are valid")
    }

    /// Loads `<id>.txt` for every template plus `output_format.txt`.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| PromptError::Template(format!("{}: {e}", dir.join(name).display())))
        };
        let mut sources = Vec::new();
        for id in TemplateId::ALL {
            sources.push(read(&format!("{id}.txt"))?);
        }
        Self::from_sources(&sources, &read("output_format.txt")?)
    }

    fn from_sources(sources: &[String], output_format: &str) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for src in sources {
            let t = Template::parse(src)?;
            if templates.insert(t.id, t.clone()).is_some() {
                return Err(PromptError::Template(format!("template `{}` defined twice", t.id)));
            }
        }
        if let Some(missing) = TemplateId::ALL.into_iter().find(|id| !templates.contains_key(id)) {
            return Err(PromptError::Template(format!("template `{missing}` missing")));
        }
        Ok(Self { templates, output_format: output_format.trim_end().to_string() })
    }

    pub fn template(&self, id: TemplateId) -> &Template {
        &self.templates[&id]
    }

    pub fn output_format(&self) -> &str {
        &self.output_format
    }

    /// Renders any template from raw slot values; `{output_format}` is
    /// filled from the library.
    pub fn render_template(
        &self,
        id: TemplateId,
        values: &BTreeMap<String, String>,
    ) -> Result<PromptPair, PromptError> {
        let mut map = values.clone();
        map.insert("output_format".into(), self.output_format.clone());
        self.template(id).render(map)
    }

    fn render(&self, id: TemplateId, values: &[(&str, String)]) -> Result<PromptPair, PromptError> {
        let map: BTreeMap<String, String> = values.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        self.render_template(id, &map)
    }

    pub fn render_use_case_prompt(&self, task: &str) -> Result<PromptPair, PromptError> {
        non_empty(task, "task")?;
        self.render(TemplateId::UseCases, &[("task", task.to_string())])
    }

    pub fn render_design_prompt(&self, task: &str, use_cases: &UseCaseSet) -> Result<PromptPair, PromptError> {
        non_empty(task, "task")?;
        if use_cases.is_empty() {
            return Err(PromptError::InvalidInput("use cases are empty".into()));
        }
        self.render(TemplateId::Design, &[("task", task.to_string()), ("use_cases", use_cases.to_prompt_json())])
    }

    pub fn render_codegen_prompt(
        &self,
        task: &str,
        use_cases: &UseCaseSet,
        design: &SystemDesign,
        options: &CodegenOptions,
    ) -> Result<PromptPair, PromptError> {
        non_empty(task, "task")?;
        if use_cases.is_empty() {
            return Err(PromptError::InvalidInput("use cases are empty".into()));
        }
        design.validate().map_err(PromptError::InvalidInput)?;
        non_empty(&options.language, "language")?;
        self.render(
            TemplateId::Codegen,
            &[
                ("task", task.to_string()),
                ("use_cases", use_cases.to_prompt_json()),
                ("system_design", design.to_prompt_json()),
                ("language", options.language.clone()),
                ("gui_requirement", options.gui_requirement.clone()),
            ],
        )
    }

    pub fn render_refine_prompt(&self, bundle: &CodeBundle, findings: &[String]) -> Result<PromptPair, PromptError> {
        if bundle.is_empty() {
            return Err(PromptError::InvalidInput("bundle has no files".into()));
        }
        if findings.is_empty() {
            return Err(PromptError::NoOp);
        }
        let list: Vec<String> = findings.iter().map(|f| format!("- {f}")).collect();
        self.render(TemplateId::Refine, &[("findings", list.join("\n")), ("code", bundle.to_markdown())])
    }

    pub fn render_unit_test_prompt(&self, bundle: &CodeBundle, target_file: &str) -> Result<PromptPair, PromptError> {
        let target = bundle
            .get(target_file)
            .ok_or_else(|| PromptError::InvalidInput(format!("`{target_file}` is not in the bundle")))?;
        let source = target.file_text();
        let functions: Vec<String> = function_defs(&source).into_iter().map(|d| format!("`{}`", d.name)).collect();
        let functions = if functions.is_empty() { "(none found)".to_string() } else { functions.join(", ") };
        let mut deps = Vec::new();
        for import in imports(&source) {
            let dep = bundle
                .files
                .iter()
                .find(|f| f.extension() == target.extension() && f.stem() == import.module && f.name != target.name);
            if let Some(dep) = dep {
                if !deps.iter().any(|d: &&crate::parsers::CodeFile| d.name == dep.name) {
                    deps.push(dep);
                }
            }
        }
        let dependencies: Vec<String> = deps.iter().map(|f| f.to_markdown()).collect();
        self.render(
            TemplateId::UnitTests,
            &[
                ("target_file", target.name.clone()),
                ("target_module", target.stem().to_string()),
                ("test_file", test_file_name(&target.name)),
                ("functions", functions),
                ("target_code", target.to_markdown()),
                ("dependencies", dependencies.join("\n\n")),
            ],
        )
    }

    pub fn render_bugfix_prompt(&self, bundle: &CodeBundle, message: &str) -> Result<PromptPair, PromptError> {
        non_empty(message, "message")?;
        self.render(TemplateId::Bugfix, &[("code", bundle.to_markdown()), ("message", message.to_string())])
    }

    /// Follow-up turn after an unusable answer: the original exchange is
    /// replayed and the parse error appended.
    pub fn reask_messages(
        &self,
        original: &PromptPair,
        previous_answer: &str,
        error: &str,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        let follow_up = self.render(TemplateId::Reask, &[("error", error.trim().to_string())])?;
        let mut messages = original.to_messages();
        messages.push(ChatMessage::assistant(previous_answer));
        messages.push(ChatMessage::user(follow_up.user_message));
        Ok(messages)
    }
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

pub fn test_file_name(target: &str) -> String {
    format!("{TEST_FILE_PREFIX}{target}")
}

pub fn is_test_file(name: &str) -> bool {
    name.starts_with(TEST_FILE_PREFIX)
}

fn non_empty(value: &str, what: &str) -> Result<(), PromptError> {
    if value.trim().is_empty() {
        Err(PromptError::InvalidInput(format!("{what} is empty")))
    } else {
        Ok(())
    }
}
