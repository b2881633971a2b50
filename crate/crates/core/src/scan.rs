//! Repository snapshots.
//!
//! A [`RepoSnapshot`] is the immutable view of a repository that every other
//! stage works from: a sorted list of files, each classified by role, plus a
//! content digest that changes exactly when a path or a byte changes.

use std::path::{Component, Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("repository root not found: {0}")]
    RootNotFound(PathBuf),
    #[error("repository root is not a directory: {0}")]
    NotADirectory(PathBuf),
    #[error("failed to walk {path}: {source}")]
    Walk {
        path: PathBuf,
        #[source]
        source: walkdir::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileRole {
    Source,
    Manifest,
    Config,
    Asset,
}

/// What counts as source, manifest, and config, and what the walker skips.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Extensions (with leading dot) of analyzed source files.
    pub source_extensions: Vec<String>,
    /// File names declaring external dependencies. Matched against the
    /// final path component, at any depth.
    pub manifest_names: Vec<String>,
    /// Extensions of configuration files that are neither source nor manifest.
    pub config_extensions: Vec<String>,
    /// Directory or file names skipped wherever they appear.
    pub ignore: Vec<String>,
    /// Descend into directories whose name starts with a dot.
    pub include_hidden: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        let strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            source_extensions: strings(&[".py"]),
            manifest_names: strings(&["requirements.txt", "pyproject.toml", "setup.py", "setup.cfg"]),
            config_extensions: strings(&[".toml", ".cfg", ".ini", ".yaml", ".yml", ".json"]),
            ignore: strings(&[".git", "__pycache__", ".venv", "venv", "node_modules"]),
            include_hidden: false,
        }
    }
}

impl ScanConfig {
    pub fn is_source_path(&self, rel_path: &str) -> bool {
        self.source_extensions
            .iter()
            .any(|ext| rel_path.len() > ext.len() && rel_path.ends_with(ext.as_str()))
    }

    fn is_manifest_path(&self, rel_path: &str) -> bool {
        let name = rel_path.rsplit('/').next().unwrap_or(rel_path);
        self.manifest_names.iter().any(|m| m == name)
    }

    fn is_ignored_name(&self, name: &str) -> bool {
        self.ignore.iter().any(|i| i == name)
    }
}

/// Classify a relative path. Manifest names take precedence over source
/// extensions, so `setup.py` is a manifest.
pub fn classify_file(rel_path: &str, config: &ScanConfig) -> FileRole {
    if config.is_manifest_path(rel_path) {
        FileRole::Manifest
    } else if config.is_source_path(rel_path) {
        FileRole::Source
    } else if config
        .config_extensions
        .iter()
        .any(|ext| rel_path.ends_with(ext.as_str()))
    {
        FileRole::Config
    } else {
        FileRole::Asset
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoFile {
    /// Forward-slash separated, relative to the snapshot root.
    pub rel_path: String,
    pub role: FileRole,
    pub bytes_len: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Hex SHA-256 of the file bytes; empty-input hash when unreadable.
    pub sha256: String,
}

impl RepoFile {
    /// File name without directories.
    pub fn file_name(&self) -> &str {
        self.rel_path.rsplit('/').next().unwrap_or(&self.rel_path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoSnapshot {
    pub root: PathBuf,
    pub files: Vec<RepoFile>,
    pub digest: String,
}

impl RepoSnapshot {
    pub fn file(&self, rel_path: &str) -> Option<&RepoFile> {
        self.files
            .binary_search_by(|f| f.rel_path.as_str().cmp(rel_path))
            .ok()
            .map(|i| &self.files[i])
    }

    pub fn files_with_role(&self, role: FileRole) -> impl Iterator<Item = &RepoFile> {
        self.files.iter().filter(move |f| f.role == role)
    }
}

/// Returns true when `rel` is a plain relative path that stays under its root.
pub fn is_safe_relative(rel: &str) -> bool {
    !rel.is_empty()
        && Path::new(rel)
            .components()
            .all(|c| matches!(c, Component::Normal(_)))
}

pub fn scan_repository(root: &Path, config: &ScanConfig) -> Result<RepoSnapshot, ScanError> {
    if !root.exists() {
        return Err(ScanError::RootNotFound(root.to_path_buf()));
    }
    if !root.is_dir() {
        return Err(ScanError::NotADirectory(root.to_path_buf()));
    }

    let mut paths = Vec::new();
    let walker = WalkDir::new(root)
        .follow_links(false)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|entry| {
            if entry.depth() == 0 {
                return true;
            }
            let name = entry.file_name().to_string_lossy();
            if config.is_ignored_name(&name) {
                return false;
            }
            if entry.file_type().is_dir() && !config.include_hidden && name.starts_with('.') {
                return false;
            }
            true
        });
    for entry in walker {
        let entry = entry.map_err(|source| ScanError::Walk {
            path: root.to_path_buf(),
            source,
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths under root");
        let rel_str = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if is_safe_relative(&rel_str) {
            paths.push((rel_str, entry.path().to_path_buf()));
        }
    }

    let mut files: Vec<RepoFile> = paths
        .into_par_iter()
        .map(|(rel_path, abs)| read_file(rel_path, &abs, config))
        .collect();
    files.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
    files.dedup_by(|a, b| a.rel_path == b.rel_path);

    let digest = snapshot_digest(&files);
    Ok(RepoSnapshot {
        root: root.to_path_buf(),
        files,
        digest,
    })
}

fn read_file(rel_path: String, abs: &Path, config: &ScanConfig) -> RepoFile {
    match std::fs::read(abs) {
        Ok(bytes) => {
            let sha256 = hex::encode(Sha256::digest(&bytes));
            let bytes_len = bytes.len() as u64;
            let text = String::from_utf8(bytes).ok();
            RepoFile {
                role: classify_file(&rel_path, config),
                rel_path,
                bytes_len,
                text,
                sha256,
            }
        }
        Err(_) => RepoFile {
            role: FileRole::Asset,
            bytes_len: std::fs::metadata(abs).map(|m| m.len()).unwrap_or(0),
            rel_path,
            text: None,
            sha256: hex::encode(Sha256::digest(b"")),
        },
    }
}

fn snapshot_digest(files: &[RepoFile]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"envalign-snapshot-v1\n");
    for file in files {
        hasher.update((file.rel_path.len() as u64).to_le_bytes());
        hasher.update(file.rel_path.as_bytes());
        hasher.update(file.bytes_len.to_le_bytes());
        hasher.update(file.sha256.as_bytes());
    }
    hex::encode(hasher.finalize())
}
