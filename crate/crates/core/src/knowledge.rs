//! Offline knowledge about the analyzed language's package ecosystem: which
//! top-level names belong to the standard library and how import names map
//! to published distribution names.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

const BUNDLED_STDLIB: &str = include_str!("../assets/stdlib-py310.txt");

/// Interpreter version the bundled standard-library list was taken from.
pub const BUNDLED_STDLIB_VERSION: &str = "3.10";

const BUNDLED_ALIASES: &[(&str, &str)] = &[
    ("PIL", "pillow"),
    ("bs4", "beautifulsoup4"),
    ("cv2", "opencv-python"),
    ("dateutil", "python-dateutil"),
    ("dotenv", "python-dotenv"),
    ("sklearn", "scikit-learn"),
    ("yaml", "pyyaml"),
];

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid alias table {path}: {message}")]
    AliasTable { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackageKnowledge {
    pub stdlib: BTreeSet<String>,
    /// Import name to distribution name.
    pub aliases: BTreeMap<String, String>,
}

impl Default for PackageKnowledge {
    fn default() -> Self {
        Self::bundled()
    }
}

impl PackageKnowledge {
    pub fn bundled() -> Self {
        Self {
            stdlib: parse_name_list(BUNDLED_STDLIB),
            aliases: BUNDLED_ALIASES
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Replace the standard-library list with one name per line from `path`.
    pub fn with_stdlib_file(mut self, path: &Path) -> Result<Self, KnowledgeError> {
        let text = std::fs::read_to_string(path).map_err(|source| KnowledgeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.stdlib = parse_name_list(&text);
        Ok(self)
    }

    /// Merge a TOML table of `import_name = "distribution-name"` entries.
    pub fn with_alias_file(mut self, path: &Path) -> Result<Self, KnowledgeError> {
        let text = std::fs::read_to_string(path).map_err(|source| KnowledgeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let table: BTreeMap<String, String> =
            toml::from_str(&text).map_err(|e| KnowledgeError::AliasTable {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        self.aliases.extend(table);
        Ok(self)
    }

    pub fn is_stdlib(&self, top_level: &str) -> bool {
        self.stdlib.contains(top_level)
    }

    /// Normalized distribution name for a top-level import name.
    pub fn distribution_for_import(&self, top_level: &str) -> String {
        match self.aliases.get(top_level) {
            Some(dist) => normalize_package_name(dist),
            None => normalize_package_name(top_level),
        }
    }
}

fn parse_name_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Lowercase, with runs of `-`, `_`, `.` collapsed to a single `-`.
pub fn normalize_package_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut in_sep = false;
    for c in name.trim().chars() {
        if matches!(c, '-' | '_' | '.') {
            if !in_sep {
                out.push('-');
            }
            in_sep = true;
        } else {
            out.extend(c.to_lowercase());
            in_sep = false;
        }
    }
    out
}
