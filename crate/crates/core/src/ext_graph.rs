//! The external environment graph: which packages the code imports, which
//! the manifests declare, and where the two disagree.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::knowledge::PackageKnowledge;
use crate::manifest::DeclaredDependency;
use crate::parser::ImportRecord;
use crate::scan::RepoSnapshot;

/// Minimum suffix similarity for an unknown dotted name to count as a
/// reference to an internal module.
pub const SUFFIX_THRESHOLD: Similarity = Similarity {
    numerator: 1,
    denominator: 2,
};

/// Exact ratio of shared trailing dotted segments to target segments.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Similarity {
    pub numerator: u32,
    pub denominator: u32,
}

impl Similarity {
    pub fn value(self) -> f64 {
        if self.denominator == 0 {
            0.0
        } else {
            self.numerator as f64 / self.denominator as f64
        }
    }
}

impl PartialEq for Similarity {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Similarity {}

impl PartialOrd for Similarity {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Similarity {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let lhs = self.numerator as u64 * other.denominator.max(1) as u64;
        let rhs = other.numerator as u64 * self.denominator.max(1) as u64;
        lhs.cmp(&rhs)
    }
}

/// Shared trailing segments between `target` and `module`, over the
/// number of segments in `target`.
pub fn suffix_similarity(target: &str, module: &str) -> Similarity {
    let t: Vec<&str> = target.split('.').collect();
    let m: Vec<&str> = module.split('.').collect();
    let shared = t
        .iter()
        .rev()
        .zip(m.iter().rev())
        .take_while(|(a, b)| a == b)
        .count();
    Similarity {
        numerator: shared as u32,
        denominator: t.len() as u32,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "class", content = "package")]
pub enum ImportClass {
    Internal,
    Stdlib,
    External(String),
}

fn first_segment(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Classify one import against the snapshot's internal modules and the
/// standard library. Rule order: relative, internal top-level name,
/// standard library, suffix similarity, external.
pub fn resolve_import_target(
    imp: &ImportRecord,
    internal_modules: &BTreeSet<String>,
    stdlib: &BTreeSet<String>,
) -> ImportClass {
    if imp.relative_level > 0 {
        return ImportClass::Internal;
    }
    classify_dotted(&imp.target, internal_modules, stdlib)
}

pub(crate) fn classify_dotted(
    target: &str,
    internal_modules: &BTreeSet<String>,
    stdlib: &BTreeSet<String>,
) -> ImportClass {
    let head = first_segment(target);
    if internal_modules.iter().any(|m| first_segment(m) == head) {
        return ImportClass::Internal;
    }
    if stdlib.contains(head) {
        return ImportClass::Stdlib;
    }
    if internal_modules
        .iter()
        .any(|m| suffix_similarity(target, m) >= SUFFIX_THRESHOLD)
    {
        return ImportClass::Internal;
    }
    ImportClass::External(head.to_string())
}

/// Classification context for one snapshot.
#[derive(Debug, Clone)]
pub struct ImportResolver<'k> {
    pub internal_modules: BTreeSet<String>,
    pub knowledge: &'k PackageKnowledge,
}

impl<'k> ImportResolver<'k> {
    pub fn new(internal_modules: BTreeSet<String>, knowledge: &'k PackageKnowledge) -> Self {
        Self {
            internal_modules,
            knowledge,
        }
    }

    pub fn classify(&self, imp: &ImportRecord) -> ImportClass {
        resolve_import_target(imp, &self.internal_modules, &self.knowledge.stdlib)
    }

    pub fn classify_name(&self, dotted: &str) -> ImportClass {
        classify_dotted(dotted, &self.internal_modules, &self.knowledge.stdlib)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtNodeKind {
    Project,
    File,
    Package,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PackageOrigin {
    External,
    Stdlib,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtNodeAttrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub used_in_code: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_version_constraint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<PackageOrigin>,
    /// Top-level import names that map to this package.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub import_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtNode {
    pub id: String,
    pub kind: ExtNodeKind,
    pub attrs: ExtNodeAttrs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtEdgeKind {
    Contains,
    Imports,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExtEdge {
    pub src: String,
    pub dst: String,
    pub kind: ExtEdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalEnvGraph {
    pub nodes: Vec<ExtNode>,
    pub edges: Vec<ExtEdge>,
    pub snapshot_digest: String,
}

pub const PROJECT_NODE: &str = "project";

pub fn file_node_id(rel_path: &str) -> String {
    format!("file:{rel_path}")
}

pub fn package_node_id(package: &str) -> String {
    format!("package:{package}")
}

impl ExternalEnvGraph {
    pub fn node(&self, id: &str) -> Option<&ExtNode> {
        self.nodes
            .binary_search_by(|n| n.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn package(&self, name: &str) -> Option<&ExtNode> {
        self.node(&package_node_id(name))
    }

    pub fn packages(&self) -> impl Iterator<Item = &ExtNode> {
        self.nodes.iter().filter(|n| n.kind == ExtNodeKind::Package)
    }

    pub fn has_file(&self, rel_path: &str) -> bool {
        self.node(&file_node_id(rel_path)).is_some()
    }

    /// Files with an import edge to `package_id`.
    pub fn importers_of(&self, package_id: &str) -> Vec<String> {
        self.edges
            .iter()
            .filter(|e| e.kind == ExtEdgeKind::Imports && e.dst == package_id)
            .filter_map(|e| e.src.strip_prefix("file:").map(str::to_string))
            .collect()
    }

    pub fn to_json(&self) -> String {
        canonical::to_json(self)
    }

    pub fn digest(&self) -> String {
        canonical::digest(self)
    }

    /// Checks the structural invariants; returns the first violation.
    pub fn validate(&self) -> Result<(), String> {
        let projects = self.nodes.iter().filter(|n| n.kind == ExtNodeKind::Project).count();
        if projects != 1 {
            return Err(format!("expected one project node, found {projects}"));
        }
        let ids: BTreeSet<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        if ids.len() != self.nodes.len() {
            return Err("duplicate node ids".into());
        }
        if !self.nodes.windows(2).all(|w| (&w[0].id, w[0].kind) < (&w[1].id, w[1].kind)) {
            return Err("nodes not in canonical order".into());
        }
        if !self.edges.windows(2).all(|w| w[0] < w[1]) {
            return Err("edges not in canonical order".into());
        }
        let kind_of = |id: &str| self.node(id).map(|n| n.kind);
        for e in &self.edges {
            let (src, dst) = (kind_of(&e.src), kind_of(&e.dst));
            let ok = match e.kind {
                ExtEdgeKind::Contains => {
                    src == Some(ExtNodeKind::Project) && dst == Some(ExtNodeKind::File)
                }
                ExtEdgeKind::Imports => {
                    src == Some(ExtNodeKind::File) && dst == Some(ExtNodeKind::Package)
                }
            };
            if !ok {
                return Err(format!("edge {} -> {} violates {:?} endpoints", e.src, e.dst, e.kind));
            }
        }
        for n in &self.nodes {
            let a = &n.attrs;
            match n.kind {
                ExtNodeKind::Package => {
                    let (Some(used), Some(declared)) = (a.used_in_code, a.declared) else {
                        return Err(format!("package node {} lacks flags", n.id));
                    };
                    if !used && !declared {
                        return Err(format!("package node {} is neither used nor declared", n.id));
                    }
                }
                _ => {
                    if a.used_in_code.is_some() || a.declared.is_some() {
                        return Err(format!("non-package node {} carries package flags", n.id));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Default)]
struct PackageAcc {
    used: bool,
    stdlib: bool,
    declared: bool,
    constraint: Option<String>,
    import_names: BTreeSet<String>,
}

/// Build the graph from one snapshot's imports and declarations.
///
/// `imports` maps source file paths to their extracted imports; files that
/// failed to parse are simply absent.
pub fn build_ext_graph(
    snapshot: &RepoSnapshot,
    imports: &BTreeMap<String, Vec<ImportRecord>>,
    declarations: &[DeclaredDependency],
    resolver: &ImportResolver<'_>,
) -> ExternalEnvGraph {
    let mut nodes = vec![ExtNode {
        id: PROJECT_NODE.to_string(),
        kind: ExtNodeKind::Project,
        attrs: ExtNodeAttrs::default(),
    }];
    let mut edges = BTreeSet::new();
    for file in &snapshot.files {
        let id = file_node_id(&file.rel_path);
        edges.insert(ExtEdge {
            src: PROJECT_NODE.to_string(),
            dst: id.clone(),
            kind: ExtEdgeKind::Contains,
        });
        nodes.push(ExtNode {
            id,
            kind: ExtNodeKind::File,
            attrs: ExtNodeAttrs {
                path: Some(file.rel_path.clone()),
                ..Default::default()
            },
        });
    }

    let mut packages: BTreeMap<String, PackageAcc> = BTreeMap::new();
    for (file, records) in imports {
        for imp in records {
            let (name, stdlib) = match resolver.classify(imp) {
                ImportClass::Internal => continue,
                ImportClass::Stdlib => (first_segment(&imp.target).to_string(), true),
                ImportClass::External(head) => {
                    (resolver.knowledge.distribution_for_import(&head), false)
                }
            };
            let acc = packages.entry(name.clone()).or_default();
            acc.used = true;
            acc.stdlib |= stdlib;
            acc.import_names.insert(first_segment(&imp.target).to_string());
            edges.insert(ExtEdge {
                src: file_node_id(file),
                dst: package_node_id(&name),
                kind: ExtEdgeKind::Imports,
            });
        }
    }

    let mut sorted_decls: Vec<&DeclaredDependency> = declarations.iter().collect();
    sorted_decls.sort_by(|a, b| (&a.manifest, a.line).cmp(&(&b.manifest, b.line)));
    for decl in sorted_decls {
        let acc = packages.entry(decl.package.clone()).or_default();
        if !acc.declared {
            acc.constraint = decl.version_constraint.clone();
        }
        acc.declared = true;
    }

    for (name, acc) in packages {
        let origin = if acc.stdlib && !acc.declared {
            PackageOrigin::Stdlib
        } else {
            PackageOrigin::External
        };
        nodes.push(ExtNode {
            id: package_node_id(&name),
            kind: ExtNodeKind::Package,
            attrs: ExtNodeAttrs {
                used_in_code: Some(acc.used),
                declared: Some(acc.declared),
                declared_version_constraint: acc.constraint,
                origin: Some(origin),
                import_names: acc.import_names.into_iter().collect(),
                ..Default::default()
            },
        });
    }
    nodes.sort_by(|a, b| (&a.id, a.kind).cmp(&(&b.id, b.kind)));

    ExternalEnvGraph {
        nodes,
        edges: edges.into_iter().collect(),
        snapshot_digest: snapshot.digest.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapKind {
    UsedNotDeclared,
    DeclaredNotUsed,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DependencyGap {
    pub package: String,
    pub kind: GapKind,
    pub using_files: Vec<String>,
}

pub fn find_dependency_gaps(graph: &ExternalEnvGraph) -> Vec<DependencyGap> {
    let mut gaps = Vec::new();
    for node in graph.packages() {
        let a = &node.attrs;
        let used = a.used_in_code.unwrap_or(false);
        let declared = a.declared.unwrap_or(false);
        let package = node.id.strip_prefix("package:").unwrap_or(&node.id).to_string();
        let kind = if used && !declared && a.origin == Some(PackageOrigin::External) {
            GapKind::UsedNotDeclared
        } else if declared && !used {
            GapKind::DeclaredNotUsed
        } else {
            continue;
        };
        gaps.push(DependencyGap {
            package,
            kind,
            using_files: graph.importers_of(&node.id),
        });
    }
    gaps.sort();
    gaps
}
