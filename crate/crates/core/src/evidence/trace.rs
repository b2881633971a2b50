//! Python traceback extraction from captured output.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackFrame {
    /// Relative to the workspace when `in_repo`, otherwise as printed.
    pub file: String,
    pub line: u32,
    /// Function name, `<module>`, or empty when the interpreter printed none.
    pub scope: String,
    pub in_repo: bool,
}

/// One traceback: frames outer to inner plus the exception line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct TraceBlock {
    pub frames: Vec<StackFrame>,
    /// First line of the exception report, e.g. `KeyError: 'x'`.
    pub exception: String,
    /// Byte range of the whole block in the scanned text.
    pub start: usize,
    pub end: usize,
}

impl TraceBlock {
    pub fn exception_type(&self) -> &str {
        let head = self.exception.split(':').next().unwrap_or("").trim();
        head.rsplit('.').next().unwrap_or(head)
    }

    pub fn exception_message(&self) -> &str {
        self.exception
            .split_once(':')
            .map(|(_, m)| m.trim())
            .unwrap_or("")
    }

    pub fn innermost_in_repo(&self) -> Option<&StackFrame> {
        self.frames.iter().rev().find(|f| f.in_repo)
    }
}

fn frame_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"^\s+File "([^"]+)", line (\d+)(?:, in (.+))?\s*$"#).expect("static regex")
    })
}

fn exception_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z_][\w.]*(?::.*)?$").expect("static regex"))
}

fn relativize(file: &str, workspace: &Path) -> (String, bool) {
    let ws = workspace.to_string_lossy();
    let ws = ws.trim_end_matches('/');
    if !ws.is_empty() {
        if let Some(rest) = file.strip_prefix(ws).and_then(|r| r.strip_prefix('/')) {
            return (rest.to_string(), true);
        }
    }
    let relative = !file.starts_with('/') && !file.starts_with('<') && !file.is_empty();
    let clean = file.strip_prefix("./").unwrap_or(file);
    (clean.to_string(), relative && !clean.starts_with("../"))
}

/// Line records: (byte offset, text without terminator).
fn lines_with_offsets(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let line = raw.trim_end_matches('\n').trim_end_matches('\r');
        out.push((offset, line));
        offset += raw.len();
    }
    out
}

fn parse_frame(line: &str, workspace: &Path) -> Option<StackFrame> {
    let caps = frame_re().captures(line)?;
    let (file, in_repo) = relativize(&caps[1], workspace);
    Some(StackFrame {
        file,
        line: caps[2].parse().ok()?,
        scope: caps.get(3).map(|m| m.as_str().trim().to_string()).unwrap_or_default(),
        in_repo,
    })
}

/// Find traceback blocks. Besides `Traceback (most recent call last):`
/// blocks this accepts the bare `File ..., line N` report the interpreter
/// prints for syntax errors in the main script.
pub(crate) fn trace_blocks(text: &str, workspace: &Path) -> Vec<TraceBlock> {
    let lines = lines_with_offsets(text);
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let (start, line) = lines[i];
        let header = line.trim_start() == "Traceback (most recent call last):";
        let bare = !header && parse_frame(line, workspace).is_some();
        if !header && !bare {
            i += 1;
            continue;
        }
        let mut frames = Vec::new();
        let mut j = if header { i + 1 } else { i };
        let mut exception = None;
        while j < lines.len() {
            let (_, l) = lines[j];
            if let Some(frame) = parse_frame(l, workspace) {
                frames.push(frame);
            } else if l.starts_with(' ') || l.starts_with('\t') || l.is_empty() {
                // Source excerpt, caret marker, or elided-frame note.
            } else if exception_re().is_match(l) {
                exception = Some(l.to_string());
                break;
            } else {
                break;
            }
            j += 1;
        }
        match exception {
            Some(exc) if !frames.is_empty() || header => {
                let (end_off, end_line) = lines[j];
                blocks.push(TraceBlock {
                    frames,
                    exception: exc,
                    start,
                    end: end_off + end_line.len(),
                });
                i = j + 1;
            }
            _ => i += 1,
        }
    }
    blocks
}

/// All frames of all tracebacks in `stderr`, outer to inner per block.
pub fn parse_stack_trace(stderr: &str, workspace: &Path) -> Vec<StackFrame> {
    trace_blocks(stderr, workspace)
        .into_iter()
        .flat_map(|b| b.frames)
        .collect()
}
