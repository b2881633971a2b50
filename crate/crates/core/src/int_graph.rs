//! The repository dependency graph: modules defined by files, imports
//! between them, top-level symbols, and the references that fail to resolve.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::ext_graph::{suffix_similarity, ImportClass, ImportResolver, Similarity, SUFFIX_THRESHOLD};
use crate::parser::{is_package_initializer, ImportRecord, SourceIndex, SymbolKind};
use crate::scan::RepoSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntNodeKind {
    File,
    Module,
    Symbol,
    UnresolvedRef,
    ParseError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntEdgeKind {
    DefinesModule,
    ImportsModule,
    DefinesSymbol,
    ReferencesSymbol,
    ImportsUnresolved,
    HasParseError,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImportSite {
    pub file: String,
    pub line: u32,
    pub relative_level: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleMatch {
    pub module: String,
    pub score: Similarity,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntNodeAttrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol_kind: Option<SymbolKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub importing_modules: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sites: Vec<ImportSite>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_match: Option<ModuleMatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntNode {
    pub id: String,
    pub kind: IntNodeKind,
    pub attrs: IntNodeAttrs,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IntEdge {
    pub src: String,
    pub dst: String,
    pub kind: IntEdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoDependencyGraph {
    pub nodes: Vec<IntNode>,
    pub edges: Vec<IntEdge>,
    pub snapshot_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnresolvedRef {
    pub target: String,
    pub importing_modules: Vec<String>,
    pub sites: Vec<ImportSite>,
    pub best_match: Option<ModuleMatch>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "symbol")]
pub enum SymbolResolution {
    Resolved(String),
    MissingSymbol,
    MissingModule,
}

pub fn file_node_id(rel_path: &str) -> String {
    format!("file:{rel_path}")
}

pub fn module_node_id(module: &str) -> String {
    format!("module:{module}")
}

pub fn symbol_node_id(module: &str, name: &str) -> String {
    format!("symbol:{module}:{name}")
}

pub fn unresolved_node_id(target: &str) -> String {
    format!("unresolved:{target}")
}

pub fn parse_error_node_id(rel_path: &str) -> String {
    format!("parse-error:{rel_path}")
}

impl RepoDependencyGraph {
    pub fn node(&self, id: &str) -> Option<&IntNode> {
        self.nodes
            .binary_search_by(|n| n.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn nodes_of(&self, kind: IntNodeKind) -> impl Iterator<Item = &IntNode> {
        self.nodes.iter().filter(move |n| n.kind == kind)
    }

    /// Module names derived for every source file, parsed or not.
    pub fn internal_modules(&self) -> BTreeSet<String> {
        self.nodes_of(IntNodeKind::File)
            .filter_map(|n| n.attrs.module.clone())
            .collect()
    }

    pub fn defined_modules(&self) -> BTreeSet<String> {
        self.nodes_of(IntNodeKind::Module)
            .filter_map(|n| n.attrs.module.clone())
            .collect()
    }

    /// File that defines `module`, if any.
    pub fn module_file(&self, module: &str) -> Option<&str> {
        let id = module_node_id(module);
        self.edges
            .iter()
            .find(|e| e.kind == IntEdgeKind::DefinesModule && e.dst == id)
            .and_then(|e| e.src.strip_prefix("file:"))
    }

    pub fn to_json(&self) -> String {
        canonical::to_json(self)
    }

    pub fn digest(&self) -> String {
        canonical::digest(self)
    }

    /// Checks the structural invariants; returns the first violation.
    pub fn validate(&self) -> Result<(), String> {
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
        use IntEdgeKind as E;
        use IntNodeKind as N;
        for e in &self.edges {
            let src = self.node(&e.src).map(|n| n.kind);
            let dst = self.node(&e.dst).map(|n| n.kind);
            let expected = match e.kind {
                E::DefinesModule => (N::File, N::Module),
                E::ImportsModule => (N::Module, N::Module),
                E::DefinesSymbol | E::ReferencesSymbol => (N::Module, N::Symbol),
                E::ImportsUnresolved => (N::Module, N::UnresolvedRef),
                E::HasParseError => (N::File, N::ParseError),
            };
            if (src, dst) != (Some(expected.0), Some(expected.1)) {
                return Err(format!("edge {} -> {} violates {:?} endpoints", e.src, e.dst, e.kind));
            }
        }
        for m in self.nodes_of(N::Module) {
            let defs = self
                .edges
                .iter()
                .filter(|e| e.kind == E::DefinesModule && e.dst == m.id)
                .count();
            if defs != 1 {
                return Err(format!("module {} has {defs} defining files", m.id));
            }
        }
        for u in self.nodes_of(N::UnresolvedRef) {
            if let Some(m) = &u.attrs.best_match {
                if m.score < SUFFIX_THRESHOLD {
                    return Err(format!("{} has a best match below threshold", u.id));
                }
            }
        }
        Ok(())
    }
}

/// Best internal module for an unresolved target by suffix similarity.
/// Ties go to the lexicographically smallest module name.
pub fn suggest_module_match(target: &str, defined: &BTreeSet<String>) -> Option<ModuleMatch> {
    let mut best: Option<ModuleMatch> = None;
    for module in defined {
        let score = suffix_similarity(target, module);
        if best.as_ref().map_or(true, |b| score > b.score) {
            best = Some(ModuleMatch {
                module: module.clone(),
                score,
            });
        }
    }
    best.filter(|b| b.score >= SUFFIX_THRESHOLD)
}

pub fn find_unresolved_refs(graph: &RepoDependencyGraph) -> Vec<UnresolvedRef> {
    let mut refs: Vec<UnresolvedRef> = graph
        .nodes_of(IntNodeKind::UnresolvedRef)
        .map(|n| UnresolvedRef {
            target: n.attrs.target.clone().unwrap_or_default(),
            importing_modules: n.attrs.importing_modules.clone(),
            sites: n.attrs.sites.clone(),
            best_match: n.attrs.best_match.clone(),
        })
        .collect();
    refs.sort_by(|a, b| a.target.cmp(&b.target));
    refs
}

/// Resolve `module.symbol` against the graph. A name the module itself
/// imported from elsewhere counts as resolved to the original definition.
pub fn resolve_symbol_reference(
    module: &str,
    symbol: &str,
    graph: &RepoDependencyGraph,
) -> SymbolResolution {
    let module_id = module_node_id(module);
    if graph.node(&module_id).is_none() {
        return SymbolResolution::MissingModule;
    }
    let own = symbol_node_id(module, symbol);
    if graph.node(&own).is_some() {
        return SymbolResolution::Resolved(own);
    }
    let suffix = format!(":{symbol}");
    graph
        .edges
        .iter()
        .find(|e| {
            e.kind == IntEdgeKind::ReferencesSymbol && e.src == module_id && e.dst.ends_with(&suffix)
        })
        .map(|e| SymbolResolution::Resolved(e.dst.clone()))
        .unwrap_or(SymbolResolution::MissingSymbol)
}

/// Absolute module targeted by an import written in `importer_module`.
/// Returns `Err` with a display form when a relative import climbs past the
/// repository root.
pub fn absolute_import_target(
    imp: &ImportRecord,
    importer_module: &str,
) -> Result<String, String> {
    if imp.relative_level == 0 {
        return Ok(imp.target.clone());
    }
    let display = || format!("{}{}", ".".repeat(imp.relative_level as usize), imp.target);
    let mut package: Vec<&str> = importer_module.split('.').collect();
    if !is_package_initializer(&imp.importer_file) {
        package.pop();
    }
    let up = imp.relative_level as usize - 1;
    if package.len() <= up {
        return Err(display());
    }
    package.truncate(package.len() - up);
    let mut out = package.join(".");
    if !imp.target.is_empty() {
        out.push('.');
        out.push_str(&imp.target);
    }
    Ok(out)
}

struct Builder<'a> {
    index: &'a SourceIndex,
    /// module name to defining file, after collision handling
    defined: BTreeMap<String, String>,
    /// defined modules plus their strict dotted prefixes
    resolvable: BTreeSet<String>,
    symbols: BTreeMap<String, BTreeSet<String>>,
}

impl Builder<'_> {
    fn imports_of(&self, module: &str) -> &[ImportRecord] {
        self.defined
            .get(module)
            .and_then(|file| self.index.imports.get(file))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Follow a from-imported name back to its definition.
    fn lookup_symbol(&self, module: &str, name: &str, visiting: &mut BTreeSet<String>) -> Option<String> {
        if self.symbols.get(module).is_some_and(|s| s.contains(name)) {
            return Some(symbol_node_id(module, name));
        }
        if !visiting.insert(module.to_string()) {
            return None;
        }
        for imp in self.imports_of(module) {
            if !imp.imported_symbols.iter().any(|s| s == name) {
                continue;
            }
            let Ok(base) = absolute_import_target(imp, module) else {
                continue;
            };
            if let Some(found) = self.lookup_symbol(&base, name, visiting) {
                return Some(found);
            }
        }
        None
    }
}

/// Build the graph from the snapshot's parse results. Imports classified
/// stdlib or external by `resolver` are left to the external graph.
pub fn build_int_graph(
    snapshot: &RepoSnapshot,
    index: &SourceIndex,
    resolver: &ImportResolver<'_>,
) -> RepoDependencyGraph {
    let mut nodes: BTreeMap<String, IntNode> = BTreeMap::new();
    let mut edges: BTreeSet<IntEdge> = BTreeSet::new();
    let add_node = |nodes: &mut BTreeMap<String, IntNode>, id: String, kind, attrs| {
        nodes.insert(id.clone(), IntNode { id, kind, attrs });
    };
    let edge = |src: &str, dst: &str, kind| IntEdge {
        src: src.to_string(),
        dst: dst.to_string(),
        kind,
    };

    for file in index.modules.keys() {
        add_node(
            &mut nodes,
            file_node_id(file),
            IntNodeKind::File,
            IntNodeAttrs {
                path: Some(file.clone()),
                module: Some(index.modules[file].clone()),
                ..Default::default()
            },
        );
    }
    for failure in &index.failures {
        let id = parse_error_node_id(&failure.file);
        edges.insert(edge(&file_node_id(&failure.file), &id, IntEdgeKind::HasParseError));
        add_node(
            &mut nodes,
            id,
            IntNodeKind::ParseError,
            IntNodeAttrs {
                path: Some(failure.file.clone()),
                line: Some(failure.line),
                message: Some(failure.message.clone()),
                ..Default::default()
            },
        );
    }

    // Package initializers win collisions; otherwise the first path wins.
    let mut defined: BTreeMap<String, String> = BTreeMap::new();
    let mut collisions: Vec<(String, String)> = Vec::new();
    for (file, module) in &index.modules {
        if !index.imports.contains_key(file) {
            continue;
        }
        match defined.get(module) {
            None => {
                defined.insert(module.clone(), file.clone());
            }
            Some(existing) => {
                if is_package_initializer(file) && !is_package_initializer(existing) {
                    collisions.push((existing.clone(), file.clone()));
                    defined.insert(module.clone(), file.clone());
                } else {
                    collisions.push((file.clone(), existing.clone()));
                }
            }
        }
    }
    for (loser, winner) in collisions {
        if let Some(node) = nodes.get_mut(&file_node_id(&loser)) {
            node.attrs.warning = Some(format!(
                "module-name-collision: {} is also defined by {winner}",
                index.modules[&loser]
            ));
        }
    }

    let mut resolvable = BTreeSet::new();
    for module in defined.keys() {
        let parts: Vec<&str> = module.split('.').collect();
        for i in 1..=parts.len() {
            resolvable.insert(parts[..i].join("."));
        }
    }
    let mut symbols: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (module, file) in &defined {
        let module_id = module_node_id(module);
        edges.insert(edge(&file_node_id(file), &module_id, IntEdgeKind::DefinesModule));
        add_node(
            &mut nodes,
            module_id.clone(),
            IntNodeKind::Module,
            IntNodeAttrs {
                path: Some(file.clone()),
                module: Some(module.clone()),
                ..Default::default()
            },
        );
        for sym in index.symbols.get(file).into_iter().flatten() {
            let id = symbol_node_id(module, &sym.name);
            symbols.entry(module.clone()).or_default().insert(sym.name.clone());
            edges.insert(edge(&module_id, &id, IntEdgeKind::DefinesSymbol));
            // Duplicate definitions collapse onto the first occurrence.
            nodes.entry(id.clone()).or_insert(IntNode {
                id,
                kind: IntNodeKind::Symbol,
                attrs: IntNodeAttrs {
                    module: Some(module.clone()),
                    name: Some(sym.name.clone()),
                    symbol_kind: Some(sym.kind),
                    line: Some(sym.line),
                    ..Default::default()
                },
            });
        }
    }

    let builder = Builder {
        index,
        defined,
        resolvable,
        symbols,
    };
    let defined_names: BTreeSet<String> = builder.defined.keys().cloned().collect();
    let mut unresolved: BTreeMap<String, (BTreeSet<String>, BTreeSet<ImportSite>)> = BTreeMap::new();
    for module in builder.defined.keys() {
        let module_id = module_node_id(module);
        for imp in builder.imports_of(module) {
            if resolver.classify(imp) != ImportClass::Internal {
                continue;
            }
            let target = match absolute_import_target(imp, module) {
                Ok(t) if builder.resolvable.contains(&t) => t,
                Ok(t) | Err(t) => {
                    let entry = unresolved.entry(t).or_default();
                    entry.0.insert(module.clone());
                    entry.1.insert(ImportSite {
                        file: imp.importer_file.clone(),
                        line: imp.line,
                        relative_level: imp.relative_level,
                    });
                    continue;
                }
            };
            for name in &imp.imported_symbols {
                let sub = format!("{target}.{name}");
                if builder.defined.contains_key(&sub) {
                    edges.insert(edge(&module_id, &module_node_id(&sub), IntEdgeKind::ImportsModule));
                } else if let Some(sym) = builder.lookup_symbol(&target, name, &mut BTreeSet::new()) {
                    edges.insert(edge(&module_id, &sym, IntEdgeKind::ReferencesSymbol));
                }
            }
            if builder.defined.contains_key(&target) {
                edges.insert(edge(&module_id, &module_node_id(&target), IntEdgeKind::ImportsModule));
            }
        }
    }
    for (target, (importers, sites)) in unresolved {
        let id = unresolved_node_id(&target);
        for importer in &importers {
            edges.insert(edge(&module_node_id(importer), &id, IntEdgeKind::ImportsUnresolved));
        }
        let best_match = suggest_module_match(&target, &defined_names);
        add_node(
            &mut nodes,
            id,
            IntNodeKind::UnresolvedRef,
            IntNodeAttrs {
                target: Some(target),
                importing_modules: importers.into_iter().collect(),
                sites: sites.into_iter().collect(),
                best_match,
                ..Default::default()
            },
        );
    }

    edges.retain(|e| e.src != e.dst);
    RepoDependencyGraph {
        nodes: nodes.into_values().collect(),
        edges: edges.into_iter().collect(),
        snapshot_digest: snapshot.digest.clone(),
    }
}
