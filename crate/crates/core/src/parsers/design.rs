use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{basename, extract_json, file_stem, ParseError};

/// Soft limit on listed files; exceeding it is reported, not rejected.
pub const MAX_DESIGN_FILES: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignFile {
    pub filename: String,
    pub responsibility: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemDesign {
    pub files: Vec<DesignFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignFinding {
    /// The main file was listed at `position` (0-based) and moved to the front.
    MainNotFirst {
        position: usize,
    },
    TooManyFiles {
        count: usize,
    },
    NestedPath {
        original: String,
        flattened: String,
    },
}

impl std::fmt::Display for DesignFinding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DesignFinding::MainNotFirst { position } => {
                write!(f, "main file was listed at position {} and moved first", position + 1)
            }
            DesignFinding::TooManyFiles { count } => {
                write!(f, "design lists {count} files (limit {MAX_DESIGN_FILES})")
            }
            DesignFinding::NestedPath { original, flattened } => {
                write!(f, "nested path `{original}` flattened to `{flattened}`")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDesign {
    pub design: SystemDesign,
    pub findings: Vec<DesignFinding>,
}

impl SystemDesign {
    pub fn filenames(&self) -> Vec<&str> {
        self.files.iter().map(|f| f.filename.as_str()).collect()
    }

    /// Hard invariants: non-empty, unique flat names, main first. The file
    /// count limit is soft and not checked here.
    pub fn validate(&self) -> Result<(), String> {
        let first = self.files.first().ok_or("design lists no files")?;
        if file_stem(&first.filename) != "main" {
            return Err(format!("first file `{}` is not the main file", first.filename));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.files {
            if f.filename.trim().is_empty() {
                return Err("design lists an empty filename".into());
            }
            if f.filename.contains(['/', '\\']) {
                return Err(format!("`{}` is not a flat filename", f.filename));
            }
            if !seen.insert(f.filename.as_str()) {
                return Err(format!("`{}` is listed twice", f.filename));
            }
        }
        Ok(())
    }

    /// `{"main.py": "...", ...}` in design order.
    pub fn to_prompt_json(&self) -> String {
        let mut map = serde_json::Map::new();
        for f in &self.files {
            map.insert(f.filename.clone(), Value::String(f.responsibility.clone()));
        }
        serde_json::to_string_pretty(&Value::Object(map)).unwrap_or_default()
    }
}

pub fn parse_design(text: &str) -> Result<ParsedDesign, ParseError> {
    let fragment = extract_json(text)?;
    let Value::Object(map) = fragment.value else {
        return Err(ParseError::MalformedDesign("expected a JSON object".into()));
    };
    if map.is_empty() {
        return Err(ParseError::MalformedDesign("design lists no files".into()));
    }
    let mut findings = Vec::new();
    let mut files: Vec<DesignFile> = Vec::with_capacity(map.len());
    for (name, value) in map {
        let Value::String(responsibility) = value else {
            return Err(ParseError::MalformedDesign(format!("description of `{name}` is not text")));
        };
        let trimmed = name.trim();
        let flat = basename(trimmed).to_string();
        if flat.is_empty() {
            return Err(ParseError::MalformedDesign(format!("`{name}` has no file name")));
        }
        if flat != trimmed {
            findings.push(DesignFinding::NestedPath { original: name.clone(), flattened: flat.clone() });
        }
        if files.iter().any(|f| f.filename == flat) {
            return Err(ParseError::MalformedDesign(format!("`{flat}` is listed twice")));
        }
        files.push(DesignFile { filename: flat, responsibility: responsibility.trim().to_string() });
    }
    match files.iter().position(|f| file_stem(&f.filename) == "main") {
        None => return Err(ParseError::MalformedDesign("design has no main file".into())),
        Some(0) => {}
        Some(position) => {
            let main = files.remove(position);
            files.insert(0, main);
            findings.push(DesignFinding::MainNotFirst { position });
        }
    }
    if files.len() > MAX_DESIGN_FILES {
        findings.push(DesignFinding::TooManyFiles { count: files.len() });
    }
    Ok(ParsedDesign { design: SystemDesign { files }, findings })
}
