//! The FILENAME / fenced block / optional docstring grammar:
//!
//! ````text
//! main.py
//! ```python
//! '''
//! Entry point.
//! '''
//! import game
//! ```
//! ````
//!
//! The docstring is read as the first element inside the fence.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{basename, file_stem, ParseError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeFile {
    pub name: String,
    pub language_tag: String,
    pub docstring: String,
    pub body: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBundle {
    pub files: Vec<CodeFile>,
    pub round: u32,
}

impl CodeFile {
    pub fn new(name: &str, language_tag: &str, docstring: &str, body: &str) -> Self {
        Self {
            name: name.to_string(),
            language_tag: language_tag.to_string(),
            docstring: docstring.to_string(),
            body: body.to_string(),
        }
    }

    pub fn stem(&self) -> &str {
        file_stem(&self.name)
    }

    pub fn extension(&self) -> &str {
        std::path::Path::new(&self.name).extension().and_then(|e| e.to_str()).unwrap_or("")
    }

    /// Text between the fences; the docstring, when present, leads.
    pub fn content(&self) -> String {
        if self.docstring.is_empty() {
            return self.body.clone();
        }
        let quote = if self.docstring.contains("'''") { "\"\"\"" } else { "'''" };
        format!("{quote}\n{}\n{quote}\n{}", self.docstring, self.body)
    }

    /// Bytes written to disk for this file.
    pub fn file_text(&self) -> String {
        let mut text = self.content();
        text.push('\n');
        text
    }

    pub fn to_markdown(&self) -> String {
        let content = self.content();
        let longest = content
            .lines()
            .map(str::trim)
            .filter(|l| l.len() >= 3 && l.bytes().all(|b| b == b'`'))
            .map(str::len)
            .max()
            .unwrap_or(0);
        let fence = "`".repeat(3.max(longest + 1));
        format!("{}\n{fence}{}\n{content}\n{fence}", self.name, self.language_tag)
    }

    pub fn is_empty(&self) -> bool {
        self.docstring.trim().is_empty() && self.body.trim().is_empty()
    }
}

impl CodeBundle {
    pub fn new(files: Vec<CodeFile>, round: u32) -> Self {
        Self { files, round }
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&CodeFile> {
        self.files.iter().find(|f| f.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|f| f.name.as_str()).collect()
    }

    /// The file whose stem is `main`.
    pub fn entry_file(&self) -> Option<&CodeFile> {
        self.files.iter().find(|f| f.stem() == "main")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.files.is_empty() {
            return Err("bundle has no files".into());
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.files {
            if !seen.insert(f.name.as_str()) {
                return Err(format!("`{}` appears twice", f.name));
            }
        }
        if self.files.iter().filter(|f| f.stem() == "main").count() > 1 {
            return Err("bundle has more than one main file".into());
        }
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        self.files.iter().map(CodeFile::to_markdown).collect::<Vec<_>>().join("\n\n")
    }

    /// Files from `update` replace same-named files; new names are appended.
    pub fn merge(&self, update: &CodeBundle, round: u32) -> CodeBundle {
        let mut files = self.files.clone();
        for incoming in &update.files {
            match files.iter_mut().find(|f| f.name == incoming.name) {
                Some(slot) => *slot = incoming.clone(),
                None => files.push(incoming.clone()),
            }
        }
        CodeBundle { files, round }
    }

    /// Copy without the files matching `exclude`.
    pub fn without(&self, exclude: impl Fn(&CodeFile) -> bool) -> CodeBundle {
        CodeBundle { files: self.files.iter().filter(|f| !exclude(f)).cloned().collect(), round: self.round }
    }
}

pub fn parse_code_bundle(text: &str) -> Result<CodeBundle, ParseError> {
    let files = scan(text);
    if files.is_empty() {
        return Err(ParseError::NoFilesParsed);
    }
    let mut seen = std::collections::HashSet::new();
    for f in &files {
        if !seen.insert(f.name.as_str()) {
            return Err(ParseError::DuplicateFile(f.name.clone()));
        }
    }
    Ok(CodeBundle { files, round: 0 })
}

/// Lenient variant: keeps the first occurrence of each name and reports the
/// names that were repeated.
pub fn parse_code_bundle_first_wins(text: &str) -> Result<(CodeBundle, Vec<String>), ParseError> {
    let mut files: Vec<CodeFile> = Vec::new();
    let mut duplicates = Vec::new();
    for f in scan(text) {
        if files.iter().any(|g| g.name == f.name) {
            if !duplicates.contains(&f.name) {
                duplicates.push(f.name);
            }
        } else {
            files.push(f);
        }
    }
    if files.is_empty() {
        return Err(ParseError::NoFilesParsed);
    }
    Ok((CodeBundle { files, round: 0 }, duplicates))
}

static FILENAME: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?i)^(?:(?:file ?name|file|path)\s*:\s*)?([A-Za-z0-9_.\-/\\]*[A-Za-z0-9_\-]\.[A-Za-z0-9_+\-]+)$")
        .expect("filename pattern")
});

/// Strips heading marks, list bullets, emphasis and backticks around a
/// candidate FILENAME line.
fn filename_of(line: &str) -> Option<String> {
    let mut s = line.trim();
    s = s.trim_start_matches('#').trim_start();
    if let Some(rest) = s.strip_prefix("- ").or_else(|| s.strip_prefix("* ")) {
        s = rest.trim_start();
    }
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = s[digits..].strip_prefix(". ").or_else(|| s[digits..].strip_prefix(") ")) {
            s = rest.trim_start();
        }
    }
    let s = s.trim_end_matches(':').trim_matches(['*', '_', '`']).trim().trim_end_matches(':');
    let s = s.trim_matches(['*', '_', '`']).trim();
    let caps = FILENAME.captures(s)?;
    let flat = basename(caps.get(1)?.as_str());
    (!flat.is_empty() && flat.contains('.')).then(|| flat.to_string())
}

fn fence_open(line: &str) -> Option<(usize, &str)> {
    let t = line.trim();
    let ticks = t.bytes().take_while(|b| *b == b'`').count();
    (ticks >= 3).then(|| (ticks, t[ticks..].trim()))
}

fn is_fence_close(line: &str, width: usize) -> bool {
    let t = line.trim();
    t.len() >= width && t.bytes().all(|b| b == b'`')
}

fn scan(text: &str) -> Vec<CodeFile> {
    let lines: Vec<&str> = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    let mut files = Vec::new();
    let mut candidate: Option<String> = None;
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if let Some((width, info)) = fence_open(line) {
            let mut j = i + 1;
            while j < lines.len() && !is_fence_close(lines[j], width) {
                j += 1;
            }
            let content = lines[i + 1..j.min(lines.len())].join("\n");
            let (tag, info_name) = split_info(info);
            if let Some(name) = candidate.take().or(info_name) {
                let language_tag = if tag.is_empty() { language_for(&name) } else { tag };
                let (docstring, body) = split_docstring(&content);
                files.push(CodeFile { name, language_tag, docstring, body });
            }
            i = j + 1;
            continue;
        }
        if !line.trim().is_empty() {
            candidate = filename_of(line);
        }
        i += 1;
    }
    files
}

/// Language tag and, if the info string carries one, a file name.
fn split_info(info: &str) -> (String, Option<String>) {
    let mut tag = String::new();
    let mut name = None;
    for token in info.split_whitespace() {
        match filename_of(token) {
            Some(n) if name.is_none() => name = Some(n),
            _ if tag.is_empty() => tag = token.to_string(),
            _ => {}
        }
    }
    (tag, name)
}

fn language_for(name: &str) -> String {
    match std::path::Path::new(name).extension().and_then(|e| e.to_str()) {
        Some("py") => "python".into(),
        Some("js") => "javascript".into(),
        Some("ts") => "typescript".into(),
        Some("rs") => "rust".into(),
        Some(other) => other.to_string(),
        None => String::new(),
    }
}

fn split_docstring(content: &str) -> (String, String) {
    let lead = content.len() - content.trim_start().len();
    let rest = &content[lead..];
    for quote in ["'''", "\"\"\""] {
        let Some(after_open) = rest.strip_prefix(quote) else { continue };
        let Some(close) = after_open.find(quote) else { continue };
        let docstring = after_open[..close].trim().to_string();
        let mut tail = &after_open[close + quote.len()..];
        let line_end = tail.find('\n').unwrap_or(tail.len());
        if tail[..line_end].trim().is_empty() {
            tail = tail.get(line_end + 1..).unwrap_or("");
        }
        return (docstring, tail.to_string());
    }
    (String::new(), content.to_string())
}
