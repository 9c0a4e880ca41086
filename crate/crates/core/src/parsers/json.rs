use serde_json::Value;

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub struct JsonFragment {
    pub text: String,
    pub value: Value,
}

/// First balanced `{...}` region that parses as JSON. Fenced code blocks are
/// searched before the surrounding prose.
pub fn extract_json(text: &str) -> Result<JsonFragment, ParseError> {
    for block in fenced_blocks(text) {
        if let Some(found) = first_object(block) {
            return Ok(found);
        }
    }
    first_object(text).ok_or(ParseError::NoJsonFound)
}

fn first_object(text: &str) -> Option<JsonFragment> {
    let bytes = text.as_bytes();
    for (start, &b) in bytes.iter().enumerate() {
        if b != b'{' {
            continue;
        }
        let Some(end) = matching_brace(bytes, start) else { continue };
        let candidate = &text[start..=end];
        if let Ok(value) = serde_json::from_str::<Value>(candidate) {
            return Some(JsonFragment { text: candidate.to_string(), value });
        }
    }
    None
}

/// Index of the `}` closing the `{` at `start`, skipping braces inside JSON
/// strings.
fn matching_brace(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut offset = 0;
    let mut open: Option<(usize, usize)> = None; // (content start, fence width)
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        let ticks = trimmed.bytes().take_while(|b| *b == b'`').count();
        match open {
            None if ticks >= 3 => open = Some((offset + line.len(), ticks)),
            Some((begin, width)) if ticks >= width && ticks == trimmed.len() => {
                blocks.push(&text[begin..offset]);
                open = None;
            }
            _ => {}
        }
        offset += line.len();
    }
    blocks
}
