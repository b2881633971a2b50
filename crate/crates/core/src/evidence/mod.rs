//! Normalized evidence: execution logs turned into fixed-schema records.
//!
//! [`RuleNormalizer`] understands Python tracebacks, `unittest` output, and
//! installer errors. [`ExternalNormalizer`] delegates to a subprocess and
//! validates whatever it returns against the same schema.

mod external;
mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::exec::{Phase, RawExecutionLog, WORKSPACE_TOKEN};
use crate::ext_graph::{classify_dotted, ExternalEnvGraph, ImportClass};
use crate::int_graph::{find_unresolved_refs, RepoDependencyGraph};
use crate::knowledge::PackageKnowledge;
use crate::manifest::parse_requirement;
use crate::scan::is_safe_relative;

pub use external::ExternalNormalizer;
pub use trace::{parse_stack_trace, StackFrame};
use trace::{trace_blocks, TraceBlock};

pub const MAX_EXCERPT_BYTES: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceKind {
    DependencyInstallFailure,
    MissingModule,
    MissingSymbol,
    ParseFailure,
    TestAssertionFailure,
    RuntimeExceptionOther,
    Timeout,
    NonzeroExitOther,
}

impl EvidenceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceKind::DependencyInstallFailure => "dependency-install-failure",
            EvidenceKind::MissingModule => "missing-module",
            EvidenceKind::MissingSymbol => "missing-symbol",
            EvidenceKind::ParseFailure => "parse-failure",
            EvidenceKind::TestAssertionFailure => "test-assertion-failure",
            EvidenceKind::RuntimeExceptionOther => "runtime-exception-other",
            EvidenceKind::Timeout => "timeout",
            EvidenceKind::NonzeroExitOther => "nonzero-exit-other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OriginHint {
    External,
    Internal,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Confidence {
    Certain,
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceRecord {
    pub phase: Phase,
    pub kind: EvidenceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub origin_hint: OriginHint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
    #[serde(default)]
    pub frames: Vec<StackFrame>,
    pub excerpt: String,
    pub confidence: Confidence,
    #[serde(default = "one")]
    pub occurrences: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize)]
#[error("evidence record {index} rejected: {reason}")]
pub struct SchemaViolation {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NormalizeOutput {
    pub records: Vec<EvidenceRecord>,
    pub warnings: Vec<String>,
}

pub trait Normalizer {
    fn normalize(
        &self,
        logs: &[RawExecutionLog],
        g_ext: &ExternalEnvGraph,
        g_int: &RepoDependencyGraph,
    ) -> NormalizeOutput;
}

/// Origin of a dotted name under the import classification rules.
pub fn origin_of(subject: &str, g_int: &RepoDependencyGraph, knowledge: &PackageKnowledge) -> OriginHint {
    match classify_dotted(subject, &g_int.internal_modules(), &knowledge.stdlib) {
        ImportClass::Internal => OriginHint::Internal,
        ImportClass::External(_) => OriginHint::External,
        ImportClass::Stdlib => OriginHint::Unknown,
    }
}

fn first_segment(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Check one record against the schema invariants.
pub fn validate_record(
    record: &EvidenceRecord,
    logs: &[RawExecutionLog],
    g_int: &RepoDependencyGraph,
    knowledge: &PackageKnowledge,
) -> Result<(), String> {
    let subject = record.subject.as_deref().filter(|s| !s.trim().is_empty());
    if record.kind == EvidenceKind::MissingModule && subject.is_none() {
        return Err("missing-module record without subject".into());
    }
    if record.subject.is_some() && subject.is_none() {
        return Err("empty subject".into());
    }
    let internal = g_int.internal_modules();
    match record.origin_hint {
        OriginHint::External => {
            let s = subject.ok_or("external origin without subject")?;
            if internal.iter().any(|m| first_segment(m) == first_segment(s)) {
                return Err(format!("external origin for internal name {s}"));
            }
        }
        OriginHint::Internal => {
            let s = subject.ok_or("internal origin without subject")?;
            if classify_dotted(s, &internal, &knowledge.stdlib) != ImportClass::Internal {
                return Err(format!("internal origin for non-internal name {s}"));
            }
        }
        OriginHint::Unknown => {}
    }
    if record.excerpt.len() > MAX_EXCERPT_BYTES {
        return Err("excerpt longer than 2 KiB".into());
    }
    if !logs
        .iter()
        .any(|l| l.stdout.contains(&record.excerpt) || l.stderr.contains(&record.excerpt))
    {
        return Err("excerpt is not a substring of any log".into());
    }
    if let Some(file) = &record.file {
        if !is_safe_relative(file) {
            return Err(format!("file {file} is not a workspace-relative path"));
        }
    }
    if record.line == Some(0) || record.frames.iter().any(|f| f.line == 0) {
        return Err("line numbers must be positive".into());
    }
    if record.occurrences == 0 {
        return Err("occurrences must be positive".into());
    }
    if record.kind == EvidenceKind::Timeout && !logs.iter().any(|l| l.phase == record.phase && l.timed_out) {
        return Err("timeout record for a phase that did not time out".into());
    }
    Ok(())
}

/// Drop invalid records, reporting each as a warning.
pub fn validate_records(
    records: Vec<EvidenceRecord>,
    logs: &[RawExecutionLog],
    g_int: &RepoDependencyGraph,
    knowledge: &PackageKnowledge,
) -> (Vec<EvidenceRecord>, Vec<SchemaViolation>) {
    let mut kept = Vec::new();
    let mut violations = Vec::new();
    for (index, record) in records.into_iter().enumerate() {
        match validate_record(&record, logs, g_int, knowledge) {
            Ok(()) => kept.push(record),
            Err(reason) => violations.push(SchemaViolation { index, reason }),
        }
    }
    (kept, violations)
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

fn missing_module_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"No module named '([^']+)'")
}

fn missing_symbol_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"cannot import name '([^']+)' from (?:partially initialized module )?'([^']+)'")
}

fn install_failure_res() -> &'static [Regex] {
    static RES: OnceLock<Vec<Regex>> = OnceLock::new();
    RES.get_or_init(|| {
        [
            r"(?m)^ERROR: Could not find a version that satisfies the requirement (\S+)",
            r"(?m)^ERROR: No matching distribution found for (\S+)",
            r"(?m)^ERROR: Invalid requirement: '([^']*)'",
            r"(?m)^ERROR: Could not open requirements file.*$",
            r"(?m)^ERROR: Failed building wheel for (\S+)",
            r"(?m)^ERROR: ResolutionImpossible.*$",
        ]
        .iter()
        .map(|p| Regex::new(p).expect("static regex"))
        .collect()
    })
}

/// A verbatim slice of `text` no longer than the excerpt limit, keeping the
/// end of `start..end` where the exception line sits.
fn excerpt(text: &str, start: usize, end: usize) -> String {
    let mut from = start.max(end.saturating_sub(MAX_EXCERPT_BYTES));
    while !text.is_char_boundary(from) {
        from += 1;
    }
    text[from..end].to_string()
}

fn tail_excerpt(text: &str) -> String {
    let trimmed = text.trim_end();
    let start = trimmed.len().saturating_sub(MAX_EXCERPT_BYTES);
    excerpt(trimmed, start, trimmed.len())
}

/// The default normalizer: regular expressions over tracebacks and
/// installer output, with origins computed from the graphs.
#[derive(Debug, Clone)]
pub struct RuleNormalizer {
    pub knowledge: PackageKnowledge,
}

impl RuleNormalizer {
    pub fn new(knowledge: PackageKnowledge) -> Self {
        Self { knowledge }
    }

    fn record(&self, phase: Phase, kind: EvidenceKind, excerpt: String) -> EvidenceRecord {
        EvidenceRecord {
            phase,
            kind,
            subject: None,
            origin_hint: OriginHint::Unknown,
            file: None,
            line: None,
            frames: Vec::new(),
            excerpt,
            confidence: Confidence::Certain,
            occurrences: 1,
        }
    }

    fn from_block(
        &self,
        phase: Phase,
        text: &str,
        block: &TraceBlock,
        g_int: &RepoDependencyGraph,
        unresolved_sites: &BTreeMap<(String, u32), String>,
    ) -> Option<EvidenceRecord> {
        let ty = block.exception_type();
        let message = block.exception_message();
        // unittest wraps import errors of test modules; the inner trace
        // carries the real failure.
        if ty == "ImportError" && message.starts_with("Failed to import test module") {
            return None;
        }
        let mut rec = self.record(phase, EvidenceKind::RuntimeExceptionOther, excerpt(text, block.start, block.end));
        rec.frames = block.frames.clone();
        let innermost = block.innermost_in_repo();
        rec.file = innermost.map(|f| f.file.clone());
        rec.line = innermost.map(|f| f.line);

        if let Some(caps) = missing_module_re().captures(message).filter(|_| ty.ends_with("Error")) {
            let named = caps[1].to_string();
            // The interpreter names the first missing package; the import
            // site tells us the full dotted target.
            let refined = innermost
                .and_then(|f| unresolved_sites.get(&(f.file.clone(), f.line)))
                .filter(|target| *target == &named || target.starts_with(&format!("{named}.")))
                .cloned();
            let subject = refined.unwrap_or(named);
            rec.kind = EvidenceKind::MissingModule;
            rec.origin_hint = origin_of(&subject, g_int, &self.knowledge);
            rec.subject = Some(subject);
        } else if let Some(caps) = missing_symbol_re().captures(message).filter(|_| ty == "ImportError") {
            rec.kind = EvidenceKind::MissingSymbol;
            rec.origin_hint = origin_of(&caps[2], g_int, &self.knowledge);
            rec.subject = Some(format!("{}.{}", &caps[2], &caps[1]));
        } else if matches!(ty, "SyntaxError" | "IndentationError" | "TabError") {
            rec.kind = EvidenceKind::ParseFailure;
            let last = block.frames.last();
            rec.file = last.filter(|f| f.in_repo).map(|f| f.file.clone());
            rec.line = last.filter(|f| f.in_repo).map(|f| f.line);
            if let Some(file) = &rec.file {
                rec.subject = g_int
                    .node(&crate::int_graph::file_node_id(file))
                    .and_then(|n| n.attrs.module.clone());
            }
            rec.origin_hint = if rec.subject.is_some() {
                OriginHint::Internal
            } else {
                OriginHint::Unknown
            };
        } else if ty == "AssertionError" && phase == Phase::Test {
            rec.kind = EvidenceKind::TestAssertionFailure;
        } else {
            rec.subject = Some(ty.to_string()).filter(|s| !s.is_empty());
        }
        Some(rec)
    }

    fn install_records(&self, log: &RawExecutionLog, g_int: &RepoDependencyGraph) -> Vec<EvidenceRecord> {
        let mut out = Vec::new();
        for text in [&log.stderr, &log.stdout] {
            let mut hits: Vec<(usize, usize, Option<String>)> = Vec::new();
            for regex in install_failure_res() {
                for caps in regex.captures_iter(text) {
                    let whole = caps.get(0).expect("group 0");
                    let subject = caps
                        .get(1)
                        .and_then(|m| parse_requirement(m.as_str()))
                        .map(|(name, _)| name);
                    hits.push((whole.start(), whole.end(), subject));
                }
            }
            hits.sort_by_key(|h| h.0);
            for (start, end, subject) in hits {
                let mut rec = self.record(log.phase, EvidenceKind::DependencyInstallFailure, excerpt(text, start, end));
                rec.origin_hint = match &subject {
                    Some(s) if origin_of(s, g_int, &self.knowledge) == OriginHint::External => {
                        OriginHint::External
                    }
                    _ => OriginHint::Unknown,
                };
                rec.subject = subject;
                out.push(rec);
            }
        }
        out
    }

    fn records_for_log(
        &self,
        log: &RawExecutionLog,
        g_int: &RepoDependencyGraph,
        unresolved_sites: &BTreeMap<(String, u32), String>,
    ) -> Vec<EvidenceRecord> {
        if log.succeeded() {
            return Vec::new();
        }
        let mut out = Vec::new();
        if log.timed_out {
            let mut rec = self.record(log.phase, EvidenceKind::Timeout, tail_excerpt(&log.stderr));
            rec.subject = None;
            out.push(rec);
        }
        if log.phase == Phase::Install {
            out.extend(self.install_records(log, g_int));
        }
        let workspace = Path::new(WORKSPACE_TOKEN);
        for text in [&log.stderr, &log.stdout] {
            for block in trace_blocks(text, workspace) {
                out.extend(self.from_block(log.phase, text, &block, g_int, unresolved_sites));
            }
        }
        if out.is_empty() {
            let (kind, text) = if log.phase == Phase::Install {
                (EvidenceKind::DependencyInstallFailure, &log.stderr)
            } else {
                (EvidenceKind::NonzeroExitOther, &log.stderr)
            };
            let text = if text.trim().is_empty() { &log.stdout } else { text };
            let mut rec = self.record(log.phase, kind, tail_excerpt(text));
            rec.confidence = Confidence::Heuristic;
            out.push(rec);
        }
        out
    }
}

/// Collapse records that describe the same signal, keeping the first.
fn dedup(records: Vec<EvidenceRecord>) -> Vec<EvidenceRecord> {
    let mut index: BTreeMap<(Phase, EvidenceKind, Option<String>, Option<String>, Option<u32>), usize> =
        BTreeMap::new();
    let mut out: Vec<EvidenceRecord> = Vec::new();
    for rec in records {
        let key = (rec.phase, rec.kind, rec.subject.clone(), rec.file.clone(), rec.line);
        match index.get(&key) {
            Some(&i) => out[i].occurrences += rec.occurrences,
            None => {
                index.insert(key, out.len());
                out.push(rec);
            }
        }
    }
    out
}

impl Normalizer for RuleNormalizer {
    fn normalize(
        &self,
        logs: &[RawExecutionLog],
        _g_ext: &ExternalEnvGraph,
        g_int: &RepoDependencyGraph,
    ) -> NormalizeOutput {
        let mut unresolved_sites = BTreeMap::new();
        for r in find_unresolved_refs(g_int) {
            for site in &r.sites {
                unresolved_sites
                    .entry((site.file.clone(), site.line))
                    .or_insert_with(|| r.target.clone());
            }
        }
        let mut ordered: Vec<&RawExecutionLog> = logs.iter().collect();
        ordered.sort_by_key(|l| l.phase);
        let records = ordered
            .into_iter()
            .flat_map(|log| self.records_for_log(log, g_int, &unresolved_sites))
            .collect();
        NormalizeOutput {
            records: dedup(records),
            warnings: Vec::new(),
        }
    }
}

/// Records in `records` that name each subject, for quick lookups.
pub fn subjects(records: &[EvidenceRecord]) -> BTreeSet<&str> {
    records.iter().filter_map(|r| r.subject.as_deref()).collect()
}
