use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{GatewayError, TokenUsage};

/// One line of a cassette file. `request` and `response` hold the wire
/// bodies verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request_hash: String,
    pub request: Value,
    pub response: Value,
    pub usage: TokenUsage,
}

pub fn read_cassette(path: &Path) -> Result<Vec<CassetteEntry>, GatewayError> {
    let file = File::open(path).map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| GatewayError::Cassette(format!("{} line {}: {e}", path.display(), n + 1)))?;
        entries.push(entry);
    }
    Ok(entries)
}

#[derive(Debug)]
pub struct ReplayCassette {
    path: PathBuf,
    entries: Vec<CassetteEntry>,
    consumed: Vec<bool>,
}

impl ReplayCassette {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::from_entries(path, read_cassette(path)?))
    }

    pub fn from_entries(path: &Path, entries: Vec<CassetteEntry>) -> Self {
        let consumed = vec![false; entries.len()];
        Self { path: path.to_path_buf(), entries, consumed }
    }

    pub fn remaining(&self) -> usize {
        self.consumed.iter().filter(|c| !**c).count()
    }

    /// Earliest unconsumed entry with this hash.
    pub fn take(&mut self, hash: &str) -> Result<&CassetteEntry, GatewayError> {
        let found = self.entries.iter().zip(&self.consumed).position(|(e, used)| !used && e.request_hash == hash);
        match found {
            Some(i) => {
                self.consumed[i] = true;
                Ok(&self.entries[i])
            }
            None => {
                let detail = match self.consumed.iter().position(|c| !c) {
                    None => format!("cassette {} is exhausted", self.path.display()),
                    Some(i) => format!(
                        "no unconsumed entry in {} matches; next recorded request is {}",
                        self.path.display(),
                        self.entries[i].request_hash
                    ),
                };
                Err(GatewayError::ReplayMismatch { hash: hash.to_string(), detail })
            }
        }
    }
}

/// Append-only writer; each entry is flushed and synced before `append`
/// returns.
#[derive(Debug)]
pub struct CassetteWriter {
    path: PathBuf,
    file: File,
}

impl CassetteWriter {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .map_err(|e| GatewayError::Cassette(format!("{}: {e}", parent.display())))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::Cassette(format!("{}: {e}", path.display())))?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn append(&mut self, entry: &CassetteEntry) -> Result<(), GatewayError> {
        let mut line = serde_json::to_string(entry).map_err(|e| GatewayError::Cassette(e.to_string()))?;
        line.push('\n');
        let io = |e: std::io::Error| GatewayError::Cassette(format!("{}: {e}", self.path.display()));
        self.file.write_all(line.as_bytes()).map_err(io)?;
        self.file.flush().map_err(io)?;
        self.file.sync_data().map_err(io)
    }
}
