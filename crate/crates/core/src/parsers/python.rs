//! Line-oriented lexical scanning of Python source. No parsing: enough to
//! find `def` blocks and import statements.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    /// 1-based line of the `def`.
    pub line: usize,
    /// Statements of the body with comments removed; docstrings skipped.
    pub statements: Vec<String>,
    /// Comment texts found in the body.
    pub comments: Vec<String>,
    pub abstract_method: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportRef {
    /// Top-level module name.
    pub module: String,
    pub line: usize,
}

/// Marks lines that begin inside a triple-quoted string.
fn string_mask(lines: &[&str]) -> Vec<bool> {
    let mut mask = Vec::with_capacity(lines.len());
    let mut open: Option<&str> = None;
    for line in lines {
        mask.push(open.is_some());
        let mut rest: &str = line;
        loop {
            match open {
                Some(q) => match rest.find(q) {
                    Some(i) => {
                        rest = &rest[i + 3..];
                        open = None;
                    }
                    None => break,
                },
                None => {
                    let code = strip_comment(rest);
                    let next = ["'''", "\"\"\""]
                        .into_iter()
                        .filter_map(|q| code.find(q).map(|i| (i, q)))
                        .min_by_key(|(i, _)| *i);
                    match next {
                        Some((i, q)) => {
                            rest = &code[i + 3..];
                            open = Some(q);
                        }
                        None => break,
                    }
                }
            }
        }
    }
    mask
}

/// Removes a trailing `#` comment, ignoring `#` inside simple string literals.
pub fn strip_comment(line: &str) -> &str {
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '\'' | '"' => quote = Some(c),
            '#' => return &line[..i],
            _ => {}
        }
    }
    line
}

fn comment_of(line: &str) -> Option<&str> {
    let code = strip_comment(line);
    (code.len() < line.len()).then(|| line[code.len() + 1..].trim())
}

fn indent_of(line: &str) -> usize {
    line.chars().take_while(|c| c.is_whitespace()).map(|c| if c == '\t' { 8 } else { 1 }).sum()
}

fn def_name(trimmed: &str) -> Option<&str> {
    let rest = trimmed.strip_prefix("async ").map(str::trim_start).unwrap_or(trimmed);
    let rest = rest.strip_prefix("def ")?.trim_start();
    let end = rest.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(rest.len());
    (end > 0).then(|| &rest[..end])
}

/// Position just after the colon closing a `def` header that starts at
/// `lines[start]`: (line index, byte offset within that line).
fn header_end(lines: &[&str], start: usize) -> Option<(usize, usize)> {
    let mut depth = 0i32;
    for (idx, line) in lines.iter().enumerate().skip(start) {
        let code = strip_comment(line);
        let mut quote: Option<char> = None;
        for (i, c) in code.char_indices() {
            if let Some(q) = quote {
                if c == q {
                    quote = None;
                }
                continue;
            }
            match c {
                '\'' | '"' => quote = Some(c),
                '(' | '[' | '{' => depth += 1,
                ')' | ']' | '}' => depth -= 1,
                ':' if depth == 0 => return Some((idx, i + 1)),
                _ => {}
            }
        }
        if idx > start + 50 {
            break;
        }
    }
    None
}

pub fn function_defs(source: &str) -> Vec<FunctionDef> {
    let lines: Vec<&str> = source.lines().collect();
    let mask = string_mask(&lines);
    let mut defs = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if mask[i] {
            continue;
        }
        let trimmed = line.trim_start();
        let Some(name) = def_name(trimmed) else { continue };
        let Some((end_line, end_col)) = header_end(&lines, i) else { continue };
        let indent = indent_of(line);
        let abstract_method = lines[..i]
            .iter()
            .rev()
            .map(|l| l.trim())
            .take_while(|l| l.starts_with('@') || l.is_empty())
            .any(|l| l.ends_with("abstractmethod"));

        let mut raw: Vec<&str> = Vec::new();
        let inline = lines[end_line][end_col..].trim();
        if !inline.is_empty() {
            raw.push(inline);
        } else {
            for body_line in &lines[end_line + 1..] {
                let t = body_line.trim();
                if t.is_empty() {
                    continue;
                }
                if indent_of(body_line) <= indent {
                    break;
                }
                raw.push(t);
            }
        }
        let (statements, comments) = split_body(&raw);
        defs.push(FunctionDef { name: name.to_string(), line: i + 1, statements, comments, abstract_method });
    }
    defs
}

fn split_body(raw: &[&str]) -> (Vec<String>, Vec<String>) {
    let mut statements = Vec::new();
    let mut comments = Vec::new();
    let mut iter = raw.iter().peekable();
    // docstring
    if let Some(first) = iter.peek() {
        let t = first.trim_start_matches(['r', 'R', 'u', 'U']);
        if let Some(q) = ["'''", "\"\"\""].into_iter().find(|q| t.starts_with(q)) {
            let closed_here = t[3..].contains(q);
            iter.next();
            if !closed_here {
                for l in iter.by_ref() {
                    if l.contains(q) {
                        break;
                    }
                }
            }
        } else if (t.starts_with('"') || t.starts_with('\'')) && strip_comment(t).trim_end().ends_with(['"', '\'']) {
            iter.next();
        }
    }
    for line in iter {
        if let Some(c) = comment_of(line) {
            comments.push(c.to_string());
        }
        let code = strip_comment(line).trim();
        if !code.is_empty() {
            statements.push(code.to_string());
        }
    }
    (statements, comments)
}

pub fn imports(source: &str) -> Vec<ImportRef> {
    let lines: Vec<&str> = source.lines().collect();
    let mask = string_mask(&lines);
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if mask[i] {
            continue;
        }
        for stmt in strip_comment(line).split(';') {
            let stmt = stmt.trim();
            if let Some(rest) = stmt.strip_prefix("import ") {
                for part in rest.trim_start_matches('(').split(',') {
                    let dotted = part.split_whitespace().next().unwrap_or("");
                    push_module(&mut out, dotted, i + 1);
                }
            } else if let Some(rest) = stmt.strip_prefix("from ") {
                let dotted = rest.split_whitespace().next().unwrap_or("");
                if !dotted.starts_with('.') && rest.split_whitespace().nth(1) == Some("import") {
                    push_module(&mut out, dotted, i + 1);
                }
            }
        }
    }
    out
}

fn push_module(out: &mut Vec<ImportRef>, dotted: &str, line: usize) {
    let top = dotted.split('.').next().unwrap_or("").trim_matches(['(', ')']);
    let valid = top.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
        && top.chars().all(|c| c.is_alphanumeric() || c == '_');
    if valid {
        out.push(ImportRef { module: top.to_string(), line });
    }
}
