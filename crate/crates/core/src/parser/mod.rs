//! Import, definition, and parse-failure extraction for Python sources.
//!
//! This is a statement-level parser over [`lexer`] output. It recognizes
//! `import`/`from ... import` statements at any depth and top-level
//! `def`/`class`/assignment statements. Everything else is skipped.

pub(crate) mod lexer;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scan::{FileRole, RepoSnapshot};

use lexer::{logical_lines, LogicalLine, TokKind, Token};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImportRecord {
    pub importer_file: String,
    /// Dotted target as written, without leading dots.
    pub target: String,
    /// Names after `from ... import`; empty for whole-module imports and `*`.
    pub imported_symbols: Vec<String>,
    pub relative_level: u32,
    pub line: u32,
    /// True when the statement sits inside an indented block.
    pub nested: bool,
}

impl ImportRecord {
    pub fn is_from_import(&self) -> bool {
        !self.imported_symbols.is_empty() || self.relative_level > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymbolKind {
    FunctionDef,
    ClassDef,
    TopLevelBinding,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SymbolDef {
    pub module: String,
    pub name: String,
    pub kind: SymbolKind,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParseFailure {
    pub file: String,
    /// 1-based; 0 when unknown.
    pub line: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not a source path: {0}")]
pub struct InvalidSourcePath(pub String);

/// Everything extracted from one file in a single pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedSource {
    pub imports: Vec<ImportRecord>,
    pub symbols: Vec<SymbolDef>,
}

pub fn extract_imports(text: &str, file: &str) -> Result<Vec<ImportRecord>, ParseFailure> {
    parse_source(text, file, "").map(|p| p.imports)
}

pub fn extract_symbols(text: &str, module: &str) -> Result<Vec<SymbolDef>, ParseFailure> {
    parse_source(text, "", module).map(|p| p.symbols)
}

pub fn parse_source(text: &str, file: &str, module: &str) -> Result<ParsedSource, ParseFailure> {
    let fail = |line: u32, message: String| ParseFailure {
        file: file.to_string(),
        line,
        message,
    };
    let lines = logical_lines(text).map_err(|e| fail(e.line, e.message))?;
    let mut out = ParsedSource::default();
    for line in &lines {
        for stmt in split_statements(line) {
            let nested = line.indent > 0 || stmt.inline_body;
            if let Some(first) = stmt.tokens.first() {
                if first.is_name("import") || first.is_name("from") {
                    let records = parse_import(stmt.tokens, file, nested)
                        .map_err(|line| fail(line, "invalid syntax".into()))?;
                    out.imports.extend(records);
                    continue;
                }
            }
            if !nested {
                collect_symbols(stmt.tokens, module, &mut out.symbols);
            }
        }
    }
    dedup_bindings(&mut out.symbols);
    Ok(out)
}

/// Later top-level bindings of a name shadow earlier ones.
fn dedup_bindings(symbols: &mut Vec<SymbolDef>) {
    let mut seen = std::collections::HashSet::new();
    let mut keep = vec![true; symbols.len()];
    for (i, sym) in symbols.iter().enumerate().rev() {
        if sym.kind == SymbolKind::TopLevelBinding && !seen.insert(sym.name.clone()) {
            keep[i] = false;
        }
    }
    let mut it = keep.into_iter();
    symbols.retain(|_| it.next().unwrap_or(true));
}

struct Statement<'a> {
    tokens: &'a [Token],
    /// Body of a one-line compound statement such as `try: import x`.
    inline_body: bool,
}

const COMPOUND: &[&str] = &[
    "if", "elif", "else", "for", "while", "with", "try", "except", "finally", "def", "class",
    "async",
];

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if",
    "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try",
    "while", "with", "yield",
];

fn split_statements(line: &LogicalLine) -> Vec<Statement<'_>> {
    let toks = &line.tokens[..];
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    let mut inline_body = false;
    let mut header_checked = false;
    for (i, tok) in toks.iter().enumerate() {
        if tok.kind == TokKind::Op {
            match tok.text.as_str() {
                "(" | "[" | "{" => depth += 1,
                ")" | "]" | "}" => depth -= 1,
                ";" if depth == 0 => {
                    if i > start {
                        out.push(Statement {
                            tokens: &toks[start..i],
                            inline_body,
                        });
                    }
                    start = i + 1;
                    header_checked = false;
                }
                ":" if depth == 0 && !header_checked => {
                    header_checked = true;
                    let is_compound = toks[start].kind == TokKind::Name
                        && COMPOUND.contains(&toks[start].text.as_str());
                    if is_compound && i + 1 < toks.len() {
                        out.push(Statement {
                            tokens: &toks[start..=i],
                            inline_body,
                        });
                        start = i + 1;
                        inline_body = true;
                    }
                }
                _ => {}
            }
        }
    }
    if start < toks.len() {
        out.push(Statement {
            tokens: &toks[start..],
            inline_body,
        });
    }
    out
}

fn is_identifier(tok: &Token) -> bool {
    tok.kind == TokKind::Name
}

/// Parses `a.b.c`; returns the dotted name and the index after it.
fn dotted_name(toks: &[Token], mut i: usize) -> Option<(String, usize)> {
    let mut name = String::new();
    loop {
        let tok = toks.get(i).filter(|t| is_identifier(t))?;
        name.push_str(&tok.text);
        i += 1;
        if toks.get(i).is_some_and(|t| t.is_op(".")) {
            name.push('.');
            i += 1;
        } else {
            return Some((name, i));
        }
    }
}

/// Parses an import statement. The error value is the offending line.
fn parse_import(toks: &[Token], file: &str, nested: bool) -> Result<Vec<ImportRecord>, u32> {
    let line = toks[0].line;
    let mut records = Vec::new();
    if toks[0].is_name("import") {
        let mut i = 1;
        loop {
            let (target, next) = dotted_name(toks, i).ok_or(line)?;
            i = next;
            if toks.get(i).is_some_and(|t| t.is_name("as")) {
                toks.get(i + 1).filter(|t| is_identifier(t)).ok_or(line)?;
                i += 2;
            }
            records.push(ImportRecord {
                importer_file: file.to_string(),
                target,
                imported_symbols: Vec::new(),
                relative_level: 0,
                line,
                nested,
            });
            match toks.get(i) {
                None => return Ok(records),
                Some(t) if t.is_op(",") => i += 1,
                Some(t) => return Err(t.line),
            }
        }
    }

    // from-import
    let mut i = 1;
    let mut level = 0u32;
    while let Some(t) = toks.get(i) {
        if t.is_op(".") {
            level += 1;
        } else if t.is_op("...") {
            level += 3;
        } else {
            break;
        }
        i += 1;
    }
    let target = if toks.get(i).is_some_and(|t| t.is_name("import")) {
        if level == 0 {
            return Err(line);
        }
        String::new()
    } else {
        let (target, next) = dotted_name(toks, i).ok_or(line)?;
        i = next;
        target
    };
    if !toks.get(i).is_some_and(|t| t.is_name("import")) {
        return Err(line);
    }
    i += 1;
    let mut symbols = Vec::new();
    match toks.get(i) {
        Some(t) if t.is_op("*") => {
            if i + 1 != toks.len() {
                return Err(line);
            }
        }
        Some(_) => {
            let parenthesized = toks[i].is_op("(");
            let end = if parenthesized {
                if !toks.last().is_some_and(|t| t.is_op(")")) {
                    return Err(line);
                }
                i += 1;
                toks.len() - 1
            } else {
                toks.len()
            };
            while i < end {
                let name = toks.get(i).filter(|t| is_identifier(t)).ok_or(line)?;
                symbols.push(name.text.clone());
                i += 1;
                if i < end && toks[i].is_name("as") {
                    toks.get(i + 1).filter(|t| is_identifier(t)).ok_or(line)?;
                    i += 2;
                }
                if i < end {
                    if !toks[i].is_op(",") {
                        return Err(toks[i].line);
                    }
                    i += 1;
                    if i == end && !parenthesized {
                        return Err(line);
                    }
                }
            }
            if symbols.is_empty() {
                return Err(line);
            }
        }
        None => return Err(line),
    }
    records.push(ImportRecord {
        importer_file: file.to_string(),
        target,
        imported_symbols: symbols,
        relative_level: level,
        line,
        nested,
    });
    Ok(records)
}

fn collect_symbols(toks: &[Token], module: &str, out: &mut Vec<SymbolDef>) {
    let mut def = |name: &Token, kind| {
        out.push(SymbolDef {
            module: module.to_string(),
            name: name.text.clone(),
            kind,
            line: name.line,
        })
    };
    let first = &toks[0];
    let (head, rest) = if first.is_name("async") {
        (toks.get(1), &toks[1..])
    } else {
        (Some(first), toks)
    };
    if let Some(head) = head {
        if head.is_name("def") || head.is_name("class") {
            if let Some(name) = rest.get(1).filter(|t| is_identifier(t)) {
                let kind = if head.is_name("def") {
                    SymbolKind::FunctionDef
                } else {
                    SymbolKind::ClassDef
                };
                def(name, kind);
            }
            return;
        }
    }
    if first.kind == TokKind::Name && COMPOUND.contains(&first.text.as_str()) {
        return;
    }

    // Annotated assignment: `name: T = value`
    if toks.len() > 2 && is_identifier(first) && toks[1].is_op(":") {
        if toks.iter().any(|t| t.is_op("=")) {
            def(first, SymbolKind::TopLevelBinding);
        }
        return;
    }

    // Plain (possibly chained or unpacking) assignment.
    let mut depth = 0i32;
    let mut segment_start = 0;
    for (i, tok) in toks.iter().enumerate() {
        if tok.kind != TokKind::Op {
            continue;
        }
        match tok.text.as_str() {
            "(" | "[" | "{" => depth += 1,
            ")" | "]" | "}" => depth -= 1,
            "=" if depth == 0 => {
                for name in binding_targets(&toks[segment_start..i]) {
                    def(name, SymbolKind::TopLevelBinding);
                }
                segment_start = i + 1;
            }
            _ => {}
        }
    }
}

/// Names bound by an assignment target like `a`, `a, b`, or `(a, [b, *c])`.
fn binding_targets(target: &[Token]) -> Vec<&Token> {
    let allowed = |t: &Token| {
        is_identifier(t)
            || (t.kind == TokKind::Op && matches!(t.text.as_str(), "," | "(" | ")" | "[" | "]" | "*"))
    };
    if target.is_empty()
        || !target.iter().all(allowed)
        || target.iter().any(|t| KEYWORDS.contains(&t.text.as_str()))
    {
        return Vec::new();
    }
    target.iter().filter(|t| is_identifier(t)).collect()
}

/// Maps a source path to its dotted module name.
///
/// `pkg/__init__.py` names the package `pkg`; a root-level `__init__.py`
/// keeps the name `__init__`.
pub fn derive_module_name(rel_path: &str) -> Result<String, InvalidSourcePath> {
    derive_module_name_with(rel_path, &[".py".to_string()])
}

pub fn derive_module_name_with(
    rel_path: &str,
    source_extensions: &[String],
) -> Result<String, InvalidSourcePath> {
    let stem = source_extensions
        .iter()
        .find_map(|ext| rel_path.strip_suffix(ext.as_str()))
        .filter(|stem| !stem.is_empty() && !stem.ends_with('/'))
        .ok_or_else(|| InvalidSourcePath(rel_path.to_string()))?;
    let mut segments: Vec<&str> = stem.split('/').collect();
    if segments.len() > 1 && segments.last() == Some(&"__init__") {
        segments.pop();
    }
    Ok(segments.join("."))
}

/// True when `rel_path` is a package initializer file.
pub fn is_package_initializer(rel_path: &str) -> bool {
    let name = rel_path.rsplit('/').next().unwrap_or(rel_path);
    name.starts_with("__init__.")
}

/// Reverse of [`derive_module_name`] for lookups: where a module's file
/// would live.
pub fn module_path_candidates(module: &str) -> [String; 2] {
    let base = module.replace('.', "/");
    [format!("{base}.py"), format!("{base}/__init__.py")]
}

/// Parse results for every source file in a snapshot.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceIndex {
    /// Source file path to derived module name, including files that
    /// failed to parse.
    pub modules: BTreeMap<String, String>,
    /// Imports of files that parsed.
    pub imports: BTreeMap<String, Vec<ImportRecord>>,
    /// Symbols of files that parsed, keyed by file.
    pub symbols: BTreeMap<String, Vec<SymbolDef>>,
    pub failures: Vec<ParseFailure>,
}

impl SourceIndex {
    /// Every module name derived for the snapshot.
    pub fn internal_modules(&self) -> BTreeSet<String> {
        self.modules.values().cloned().collect()
    }

    pub fn all_imports(&self) -> impl Iterator<Item = &ImportRecord> {
        self.imports.values().flatten()
    }

    pub fn failure(&self, file: &str) -> Option<&ParseFailure> {
        self.failures.iter().find(|f| f.file == file)
    }
}

pub fn index_snapshot(snapshot: &RepoSnapshot, source_extensions: &[String]) -> SourceIndex {
    let results: Vec<_> = snapshot
        .files_with_role(FileRole::Source)
        .collect::<Vec<_>>()
        .into_par_iter()
        .filter_map(|file| {
            let module = derive_module_name_with(&file.rel_path, source_extensions).ok()?;
            let parsed = match &file.text {
                Some(text) => parse_source(text, &file.rel_path, &module),
                None => Err(ParseFailure {
                    file: file.rel_path.clone(),
                    line: 0,
                    message: "source is not valid UTF-8".into(),
                }),
            };
            Some((file.rel_path.clone(), module, parsed))
        })
        .collect();
    let mut index = SourceIndex::default();
    for (file, module, parsed) in results {
        index.modules.insert(file.clone(), module);
        match parsed {
            Ok(p) => {
                index.imports.insert(file.clone(), p.imports);
                index.symbols.insert(file, p.symbols);
            }
            Err(f) => index.failures.push(f),
        }
    }
    index.failures.sort();
    index
}
