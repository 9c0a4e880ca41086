//! Line-delimited event log. The first line is a header
//! `{"schema":"caseloop.session","version":1,"session_id":"..."}`; every
//! further line is one [`SessionEvent`].

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::state::{SessionError, SessionEvent, SessionState};

pub const EVENT_LOG: &str = "events.jsonl";
pub const SCHEMA: &str = "caseloop.session";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: String,
    pub version: u32,
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: line {line}: {message} (last good seq {last_good_seq})")]
pub struct LoadError {
    pub path: PathBuf,
    /// 1-based line number of the offending record.
    pub line: usize,
    /// Highest seq that was read and applied successfully; 0 if none.
    pub last_good_seq: u64,
    pub message: String,
}

/// Append handle on a session's event log.
#[derive(Debug)]
pub struct EventStore {
    path: PathBuf,
    file: File,
}

fn io_err(path: &Path, e: std::io::Error) -> SessionError {
    SessionError::Io(format!("{}: {e}", path.display()))
}

impl EventStore {
    /// Starts a new log in `dir`, which must not already hold one.
    pub fn create(dir: &Path, session_id: &str) -> Result<Self, SessionError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(EVENT_LOG);
        let mut file = OpenOptions::new().create_new(true).append(true).open(&path).map_err(|e| io_err(&path, e))?;
        let header = LogHeader { schema: SCHEMA.into(), version: SCHEMA_VERSION, session_id: session_id.into() };
        let line = serde_json::to_string(&header).map_err(|e| SessionError::Io(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| io_err(&path, e))?;
        file.sync_data().map_err(|e| io_err(&path, e))?;
        Ok(Self { path, file })
    }

    pub fn open(dir: &Path) -> Result<Self, SessionError> {
        let path = dir.join(EVENT_LOG);
        let file = OpenOptions::new().append(true).open(&path).map_err(|e| io_err(&path, e))?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &SessionEvent) -> Result<(), SessionError> {
        let mut line = serde_json::to_string(event).map_err(|e| SessionError::Io(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| io_err(&self.path, e))?;
        self.file.sync_data().map_err(|e| io_err(&self.path, e))
    }
}

/// Reads and folds the log in `dir`.
pub fn load_state(dir: &Path) -> Result<SessionState, SessionError> {
    let path = dir.join(EVENT_LOG);
    if !path.exists() {
        return Err(SessionError::NotFound(dir.display().to_string()));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let fail = |line: usize, last_good_seq: u64, message: String| LoadError {
        path: path.clone(),
        line,
        last_good_seq,
        message,
    };
    let mut lines = text.split_inclusive('\n').enumerate();
    let header: LogHeader = match lines.next() {
        Some((_, l)) => serde_json::from_str(l.trim_end()).map_err(|e| fail(1, 0, format!("bad header: {e}")))?,
        None => return Err(fail(1, 0, "log is empty".into()).into()),
    };
    if header.schema != SCHEMA || header.version != SCHEMA_VERSION {
        return Err(fail(1, 0, format!("unsupported schema {} v{}", header.schema, header.version)).into());
    }
    let mut state: Option<SessionState> = None;
    for (i, raw) in lines {
        let last_good = state.as_ref().map_or(0, |s| s.events.len() as u64);
        if !raw.ends_with('\n') {
            return Err(fail(i + 1, last_good, "record is truncated".into()).into());
        }
        let event: SessionEvent =
            serde_json::from_str(raw.trim_end()).map_err(|e| fail(i + 1, last_good, e.to_string()))?;
        let applied = match state.as_mut() {
            None => SessionState::genesis(event).map(|s| state = Some(s)),
            Some(s) => s.apply(event),
        };
        applied.map_err(|e| fail(i + 1, last_good, e.to_string()))?;
    }
    let state = state.ok_or_else(|| fail(2, 0, "log has no events".into()))?;
    if state.id != header.session_id {
        return Err(fail(2, 0, format!("events belong to `{}`, header names `{}`", state.id, header.session_id)).into());
    }
    Ok(state)
}
