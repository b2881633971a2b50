//! Snapshot a repository and build both graphs from it.

use std::path::Path;

use serde::Serialize;

use crate::ext_graph::{build_ext_graph, ExternalEnvGraph, ImportResolver};
use crate::int_graph::{build_int_graph, RepoDependencyGraph};
use crate::knowledge::PackageKnowledge;
use crate::manifest::{parse_manifest, DeclaredDependency, MalformedManifestLine};
use crate::parser::{index_snapshot, SourceIndex};
use crate::scan::{scan_repository, FileRole, RepoSnapshot, ScanConfig, ScanError};

#[derive(Debug, Clone)]
pub struct BuiltEnv {
    pub snapshot: RepoSnapshot,
    pub index: SourceIndex,
    pub declarations: Vec<DeclaredDependency>,
    pub warnings: Vec<BuildWarning>,
    pub g_ext: ExternalEnvGraph,
    pub g_int: RepoDependencyGraph,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BuildWarning {
    MalformedManifestLine(MalformedManifestLine),
    ModuleNameCollision { file: String, message: String },
}

impl BuiltEnv {
    pub fn resolver<'k>(&self, knowledge: &'k PackageKnowledge) -> ImportResolver<'k> {
        ImportResolver::new(self.index.internal_modules(), knowledge)
    }
}

pub fn build_env(
    root: &Path,
    scan: &ScanConfig,
    knowledge: &PackageKnowledge,
) -> Result<BuiltEnv, ScanError> {
    let snapshot = scan_repository(root, scan)?;
    Ok(build_env_from_snapshot(snapshot, scan, knowledge))
}

pub fn build_env_from_snapshot(
    snapshot: RepoSnapshot,
    scan: &ScanConfig,
    knowledge: &PackageKnowledge,
) -> BuiltEnv {
    let index = index_snapshot(&snapshot, &scan.source_extensions);
    let mut declarations = Vec::new();
    let mut warnings = Vec::new();
    for file in snapshot.files_with_role(FileRole::Manifest) {
        let parsed = parse_manifest(file);
        declarations.extend(parsed.declarations);
        warnings.extend(parsed.malformed.into_iter().map(BuildWarning::MalformedManifestLine));
    }
    declarations.sort();

    let resolver = ImportResolver::new(index.internal_modules(), knowledge);
    let g_ext = build_ext_graph(&snapshot, &index.imports, &declarations, &resolver);
    let g_int = build_int_graph(&snapshot, &index, &resolver);
    for node in &g_int.nodes {
        if let (Some(path), Some(message)) = (&node.attrs.path, &node.attrs.warning) {
            warnings.push(BuildWarning::ModuleNameCollision {
                file: path.clone(),
                message: message.clone(),
            });
        }
    }
    BuiltEnv {
        snapshot,
        index,
        declarations,
        warnings,
        g_ext,
        g_int,
    }
}
