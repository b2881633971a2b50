//! Dominant-source attribution.
//!
//! Clauses are checked in a fixed order: external dependency satisfaction,
//! then internal reference resolution, then residual logic. Graph-only
//! signals count only when some execution failure corroborates them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::evidence::{EvidenceKind, EvidenceRecord, OriginHint};
use crate::exec::Phase;
use crate::ext_graph::{find_dependency_gaps, package_node_id, ExternalEnvGraph, GapKind, PROJECT_NODE};
use crate::int_graph::{
    find_unresolved_refs, module_node_id, parse_error_node_id, unresolved_node_id, IntNodeKind,
    RepoDependencyGraph,
};
use crate::knowledge::normalize_package_name;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    ExternalDependency,
    InternalReference,
    ResidualLogic,
    Pass,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::ExternalDependency => "external-dependency",
            Source::InternalReference => "internal-reference",
            Source::ResidualLogic => "residual-logic",
            Source::Pass => "pass",
        }
    }
}

pub mod rules {
    pub const INSTALL_FAILURE: &str = "external/install-failure";
    pub const EXTERNAL_MISSING_MODULE: &str = "external/missing-module";
    pub const UNKNOWN_MISSING_MODULE: &str = "external/ambiguous-missing-module";
    pub const CORROBORATED_GAP: &str = "external/corroborated-gap";
    pub const INTERNAL_MISSING_MODULE: &str = "internal/missing-module";
    pub const MISSING_SYMBOL: &str = "internal/missing-symbol";
    pub const PARSE_FAILURE: &str = "internal/parse-failure";
    pub const CORROBORATED_NODE: &str = "internal/corroborated-node";
    pub const RESIDUAL: &str = "logic/residual-failure";
    pub const PASS: &str = "pass/no-evidence";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionVerdict {
    pub source: Source,
    /// Every rule whose predicate held, in priority order.
    pub fired_rules: Vec<String>,
    /// Indices into the evidence list behind the chosen source.
    pub supporting_evidence: Vec<usize>,
    pub supporting_nodes: Vec<String>,
    /// Subject of the first supporting record, when it has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AttributionError {
    #[error("evidence record {index} names {file}, which is not in the snapshot")]
    InconsistentInputs { index: usize, file: String },
}

#[derive(Debug, Default)]
struct Clause {
    rules: Vec<&'static str>,
    evidence: BTreeSet<usize>,
    nodes: BTreeSet<String>,
}

impl Clause {
    fn hit(&mut self, rule: &'static str, index: usize) {
        if !self.rules.contains(&rule) {
            self.rules.push(rule);
        }
        self.evidence.insert(index);
    }

    fn fired(&self) -> bool {
        !self.rules.is_empty()
    }
}

fn first_segment(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

fn touched_files(record: &EvidenceRecord) -> BTreeSet<&str> {
    record
        .file
        .iter()
        .map(String::as_str)
        .chain(record.frames.iter().filter(|f| f.in_repo).map(|f| f.file.as_str()))
        .collect()
}

fn is_runtime_phase(record: &EvidenceRecord) -> bool {
    matches!(record.phase, Phase::Launch | Phase::Test)
}

/// Package node for an import or distribution name, if the graph has one.
fn package_for(g_ext: &ExternalEnvGraph, name: &str) -> Option<String> {
    let head = first_segment(name);
    g_ext
        .packages()
        .find(|p| p.attrs.import_names.iter().any(|n| n == head))
        .or_else(|| g_ext.package(&normalize_package_name(head)))
        .map(|p| p.id.clone())
}

fn external_clause(g_ext: &ExternalEnvGraph, evidence: &[EvidenceRecord]) -> Clause {
    let mut c = Clause::default();
    for (i, r) in evidence.iter().enumerate() {
        match (r.kind, r.origin_hint) {
            (EvidenceKind::DependencyInstallFailure, _) => {
                c.hit(rules::INSTALL_FAILURE, i);
                if let Some(s) = &r.subject {
                    c.nodes.insert(package_for(g_ext, s).unwrap_or_else(|| package_node_id(s)));
                }
            }
            (EvidenceKind::MissingModule, OriginHint::External | OriginHint::Unknown) => {
                let rule = if r.origin_hint == OriginHint::External {
                    rules::EXTERNAL_MISSING_MODULE
                } else {
                    rules::UNKNOWN_MISSING_MODULE
                };
                c.hit(rule, i);
                if let Some(p) = r.subject.as_deref().and_then(|s| package_for(g_ext, s)) {
                    c.nodes.insert(p);
                }
            }
            _ => {}
        }
    }
    for gap in find_dependency_gaps(g_ext) {
        if gap.kind != GapKind::UsedNotDeclared {
            continue;
        }
        let node = package_node_id(&gap.package);
        let import_names = g_ext
            .node(&node)
            .map(|n| n.attrs.import_names.clone())
            .unwrap_or_default();
        for (i, r) in evidence.iter().enumerate().filter(|(_, r)| is_runtime_phase(r)) {
            let by_subject = r.subject.as_deref().is_some_and(|s| {
                let head = first_segment(s);
                import_names.iter().any(|n| n == head) || normalize_package_name(head) == gap.package
            });
            let touched = touched_files(r);
            let by_file = gap.using_files.iter().any(|f| touched.contains(f.as_str()));
            if by_subject || by_file {
                c.hit(rules::CORROBORATED_GAP, i);
                c.nodes.insert(node.clone());
            }
        }
    }
    c
}

fn internal_clause(g_int: &RepoDependencyGraph, evidence: &[EvidenceRecord]) -> Clause {
    let mut c = Clause::default();
    let unresolved = find_unresolved_refs(g_int);
    let subject_matches = |subject: &str, target: &str| {
        subject == target
            || target.starts_with(&format!("{subject}."))
            || subject.starts_with(&format!("{target}."))
    };
    for (i, r) in evidence.iter().enumerate() {
        let rule = match (r.kind, r.origin_hint) {
            (EvidenceKind::MissingModule, OriginHint::Internal) => rules::INTERNAL_MISSING_MODULE,
            (EvidenceKind::MissingSymbol, _) => rules::MISSING_SYMBOL,
            (EvidenceKind::ParseFailure, _) => rules::PARSE_FAILURE,
            _ => continue,
        };
        c.hit(rule, i);
        let subject = r.subject.as_deref().unwrap_or("");
        for u in &unresolved {
            if !subject.is_empty() && subject_matches(subject, &u.target) {
                c.nodes.insert(unresolved_node_id(&u.target));
            }
        }
        if let Some(file) = &r.file {
            let pe = parse_error_node_id(file);
            if r.kind == EvidenceKind::ParseFailure && g_int.node(&pe).is_some() {
                c.nodes.insert(pe);
            }
        }
        if r.kind == EvidenceKind::MissingSymbol {
            if let Some((module, _)) = subject.rsplit_once('.') {
                let id = module_node_id(module);
                if g_int.node(&id).is_some() {
                    c.nodes.insert(id);
                }
            }
        }
    }
    for (i, r) in evidence.iter().enumerate() {
        let touched = touched_files(r);
        let subject = r.subject.as_deref();
        for u in &unresolved {
            let by_subject = subject.is_some_and(|s| subject_matches(s, &u.target));
            let by_file = u.sites.iter().any(|s| touched.contains(s.file.as_str()));
            if by_subject || by_file {
                c.hit(rules::CORROBORATED_NODE, i);
                c.nodes.insert(unresolved_node_id(&u.target));
            }
        }
        for pe in g_int.nodes_of(IntNodeKind::ParseError) {
            let path = pe.attrs.path.as_deref().unwrap_or("");
            if touched.contains(path) {
                c.hit(rules::CORROBORATED_NODE, i);
                c.nodes.insert(pe.id.clone());
            }
        }
    }
    c
}

/// False exactly when the external clause fires.
pub fn external_satisfiable(g_ext: &ExternalEnvGraph, evidence: &[EvidenceRecord]) -> bool {
    !external_clause(g_ext, evidence).fired()
}

/// False exactly when the internal clause fires.
pub fn internal_resolved(g_int: &RepoDependencyGraph, evidence: &[EvidenceRecord]) -> bool {
    !internal_clause(g_int, evidence).fired()
}

fn check_files(g_ext: &ExternalEnvGraph, evidence: &[EvidenceRecord]) -> Result<(), AttributionError> {
    for (index, r) in evidence.iter().enumerate() {
        if let Some(file) = &r.file {
            if !g_ext.has_file(file) {
                return Err(AttributionError::InconsistentInputs {
                    index,
                    file: file.clone(),
                });
            }
        }
    }
    Ok(())
}

pub fn attribute(
    g_ext: &ExternalEnvGraph,
    g_int: &RepoDependencyGraph,
    evidence: &[EvidenceRecord],
) -> Result<AttributionVerdict, AttributionError> {
    check_files(g_ext, evidence)?;
    if evidence.is_empty() {
        return Ok(AttributionVerdict {
            source: Source::Pass,
            fired_rules: vec![rules::PASS.to_string()],
            supporting_evidence: Vec::new(),
            supporting_nodes: Vec::new(),
            subject: None,
        });
    }
    let external = external_clause(g_ext, evidence);
    let internal = internal_clause(g_int, evidence);
    let mut fired: Vec<String> = external
        .rules
        .iter()
        .chain(&internal.rules)
        .map(|r| r.to_string())
        .collect();
    fired.push(rules::RESIDUAL.to_string());

    let (source, chosen) = if external.fired() {
        (Source::ExternalDependency, external)
    } else if internal.fired() {
        (Source::InternalReference, internal)
    } else {
        let mut c = Clause::default();
        for (i, r) in evidence.iter().enumerate() {
            c.evidence.insert(i);
            for f in touched_files(r) {
                if g_ext.has_file(f) {
                    c.nodes.insert(crate::ext_graph::file_node_id(f));
                }
            }
        }
        (Source::ResidualLogic, c)
    };
    let mut nodes: Vec<String> = chosen.nodes.into_iter().collect();
    if nodes.is_empty() {
        nodes.push(PROJECT_NODE.to_string());
    }
    let supporting_evidence: Vec<usize> = chosen.evidence.into_iter().collect();
    let subject = supporting_evidence
        .iter()
        .find_map(|&i| evidence[i].subject.clone());
    Ok(AttributionVerdict {
        source,
        fired_rules: fired,
        supporting_evidence,
        supporting_nodes: nodes,
        subject,
    })
}
