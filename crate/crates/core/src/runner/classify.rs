use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RunStatus {
    CleanStart,
    RuntimeError,
    NonZeroExit,
    Timeout,
}

impl RunStatus {
    /// A blocking GUI that outlives the timeout without printing a traceback
    /// started correctly.
    pub fn is_clean(self) -> bool {
        matches!(self, RunStatus::CleanStart | RunStatus::Timeout)
    }
}

pub const TRACEBACK_HEADER: &str = "Traceback (most recent call last):";

/// Lines of stderr kept when a failure has no traceback.
const TAIL_LINES: usize = 20;

/// The last traceback block in `stderr`: the header line through the first
/// unindented line after it (the exception line).
pub fn last_traceback(stderr: &str) -> Option<String> {
    let lines: Vec<&str> = stderr.lines().collect();
    let start = lines.iter().rposition(|l| l.trim_start() == TRACEBACK_HEADER)?;
    let indent = lines[start].len() - lines[start].trim_start().len();
    let mut end = lines.len() - 1;
    for (i, line) in lines.iter().enumerate().skip(start + 1) {
        let own = line.len() - line.trim_start().len();
        if !line.trim().is_empty() && own <= indent {
            end = i;
            break;
        }
    }
    Some(lines[start..=end].join("\n"))
}

pub fn tail(text: &str, n: usize) -> String {
    let lines: Vec<&str> = text.trim_end().lines().collect();
    lines[lines.len().saturating_sub(n)..].join("\n")
}

/// Pure classification of a finished (or killed) process.
pub fn classify_outcome(
    exit_code: Option<i32>,
    stdout: &str,
    stderr: &str,
    timed_out: bool,
) -> (RunStatus, Option<String>) {
    if let Some(tb) = last_traceback(stderr) {
        return (RunStatus::RuntimeError, Some(tb));
    }
    if timed_out {
        return (RunStatus::Timeout, None);
    }
    match exit_code {
        Some(0) => (RunStatus::CleanStart, None),
        code => {
            let excerpt = if !stderr.trim().is_empty() {
                tail(stderr, TAIL_LINES)
            } else if !stdout.trim().is_empty() {
                tail(stdout, TAIL_LINES)
            } else {
                match code {
                    Some(c) => format!("process exited with status {c}"),
                    None => "process was terminated by a signal".to_string(),
                }
            };
            (RunStatus::NonZeroExit, Some(excerpt))
        }
    }
}
