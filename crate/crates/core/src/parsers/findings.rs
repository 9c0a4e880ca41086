use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::python::{function_defs, imports};
use super::CodeBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    UnimplementedFunction,
    MissingImport,
    EmptyFile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub file: String,
    pub detail: String,
    pub location: Option<usize>,
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.location {
            Some(line) => write!(f, "{}:{}: {}", self.file, line, self.detail),
            None => write!(f, "{}: {}", self.file, self.detail),
        }
    }
}

/// Module names that resolve without being part of the bundle.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnownModules {
    names: BTreeSet<String>,
}

const BUILTIN_PYTHON: &str = include_str!("../../assets/known_modules/python.txt");

impl KnownModules {
    /// One name per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        let names = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self { names }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn builtin_python() -> Self {
        Self::parse(BUILTIN_PYTHON)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

const PLACEHOLDER_STATEMENTS: &[&str] = &["pass", "...", "raise NotImplementedError", "raise NotImplementedError()"];

fn is_placeholder(statement: &str) -> bool {
    PLACEHOLDER_STATEMENTS.contains(&statement)
        || (statement.starts_with("raise NotImplementedError(") && statement.ends_with(')'))
}

fn is_todo(comment: &str) -> bool {
    let upper = comment.to_ascii_uppercase();
    upper.contains("TODO") || upper.contains("FIXME") || upper.contains("IMPLEMENT")
}

/// Lexical pre-test checks: placeholder function bodies, imports that
/// resolve nowhere, and empty files. Only `.py` files are scanned for the
/// first two.
pub fn detect_placeholders(bundle: &CodeBundle, known: &KnownModules) -> Vec<Finding> {
    let local: BTreeSet<&str> = bundle.files.iter().filter(|f| f.extension() == "py").map(|f| f.stem()).collect();
    let mut findings = Vec::new();
    for file in &bundle.files {
        if file.is_empty() {
            findings.push(Finding {
                kind: FindingKind::EmptyFile,
                file: file.name.clone(),
                detail: "file is empty".into(),
                location: None,
            });
            continue;
        }
        if file.extension() != "py" {
            continue;
        }
        let source = file.file_text();
        // line numbers refer to the file as written to disk
        for def in function_defs(&source) {
            if def.abstract_method {
                continue;
            }
            let only_placeholders = def.statements.iter().all(|s| is_placeholder(s));
            let flagged = if def.statements.is_empty() { true } else { only_placeholders };
            if flagged {
                let what = match def.statements.first() {
                    Some(s) => format!("placeholder `{s}`"),
                    None if def.comments.iter().any(|c| is_todo(c)) => "only a TODO comment".to_string(),
                    None => "no statements".to_string(),
                };
                findings.push(Finding {
                    kind: FindingKind::UnimplementedFunction,
                    file: file.name.clone(),
                    detail: format!("function `{}` is not implemented (body has {what})", def.name),
                    location: Some(def.line),
                });
            }
        }
        let mut reported = BTreeSet::new();
        for import in imports(&source) {
            let name = import.module.as_str();
            if local.contains(name) || known.contains(name) || !reported.insert(name.to_string()) {
                continue;
            }
            findings.push(Finding {
                kind: FindingKind::MissingImport,
                file: file.name.clone(),
                detail: format!("module `{name}` is neither a file of this project nor a known module"),
                location: Some(import.line),
            });
        }
    }
    findings
}
