//! Parsers for the three structured outputs the model produces (use-case
//! JSON, design JSON, markdown code bundles) and the lexical checks run over
//! generated code before testing.

mod bundle;
mod design;
mod findings;
mod json;
pub mod python;
mod usecases;

pub use bundle::{parse_code_bundle, parse_code_bundle_first_wins, CodeBundle, CodeFile};
pub use design::{parse_design, DesignFile, DesignFinding, ParsedDesign, SystemDesign, MAX_DESIGN_FILES};
pub use findings::{detect_placeholders, Finding, FindingKind, KnownModules};
pub use json::{extract_json, JsonFragment};
pub use usecases::{parse_use_cases, EditError, Provenance, UseCase, UseCaseEdit, UseCaseSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no parseable JSON object found in response")]
    NoJsonFound,
    #[error("malformed use cases: {0}")]
    MalformedUseCases(String),
    #[error("malformed system design: {0}")]
    MalformedDesign(String),
    #[error("no FILENAME + fenced code block pairs found in response")]
    NoFilesParsed,
    #[error("file `{0}` appears more than once in the response")]
    DuplicateFile(String),
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::NoJsonFound => "NoJsonFound",
            ParseError::MalformedUseCases(_) => "MalformedUseCases",
            ParseError::MalformedDesign(_) => "MalformedDesign",
            ParseError::NoFilesParsed => "NoFilesParsed",
            ParseError::DuplicateFile(_) => "DuplicateFile",
        }
    }
}

/// Last component of a slash- or backslash-separated path.
pub(crate) fn basename(name: &str) -> &str {
    name.rsplit(['/', '\\']).next().unwrap_or(name)
}

pub(crate) fn file_stem(name: &str) -> &str {
    std::path::Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name)
}
