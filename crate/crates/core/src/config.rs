//! Tool configuration file.
//!
//! A single TOML document; every key is optional. Precedence is command-line
//! flags over the file over built-in defaults.
//!
//! ```toml
//! budget = 4
//! normalizer = ["python3", "normalize.py"]   # omit for the rule-based normalizer
//! reviser = ["python3", "revise.py"]
//! reviser_timeout_secs = 300
//! report = "report.json"
//! timestamps = false
//! stdlib_override = "stdlib.txt"             # one top-level name per line
//! alias_table = "aliases.toml"               # import_name = "distribution"
//!
//! [scan]
//! source_extensions = [".py"]
//!
//! [exec]
//! enabled_phases = ["install", "launch"]
//! timeout_secs = { install = 120, launch = 60, test = 120 }
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::align::{LoopConfig, NormalizerMode, DEFAULT_BUDGET};
use crate::exec::{ExecConfig, ExecConfigError};
use crate::knowledge::{KnowledgeError, PackageKnowledge};
use crate::scan::ScanConfig;

pub const CONFIG_ENV: &str = "ENVALIGN_CONFIG";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub budget: u32,
    pub normalizer: Option<Vec<String>>,
    pub reviser: Option<Vec<String>>,
    pub reviser_timeout_secs: u64,
    pub report: Option<PathBuf>,
    pub timestamps: bool,
    pub stdlib_override: Option<PathBuf>,
    pub alias_table: Option<PathBuf>,
    pub scan: ScanConfig,
    pub exec: ExecConfig,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            normalizer: None,
            reviser: None,
            reviser_timeout_secs: 300,
            report: None,
            timestamps: false,
            stdlib_override: None,
            alias_table: None,
            scan: ScanConfig::default(),
            exec: ExecConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("empty command for {0}")]
    EmptyCommand(&'static str),
    #[error(transparent)]
    Exec(#[from] ExecConfigError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
}

impl ToolConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// `explicit`, else the file named by `ENVALIGN_CONFIG`, else defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::from_file(p),
            None => match std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()) {
                Some(p) => Self::from_file(Path::new(&p)),
                None => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.budget == 0 {
            return Err(ConfigError::ZeroBudget);
        }
        if self.normalizer.as_ref().is_some_and(Vec::is_empty) {
            return Err(ConfigError::EmptyCommand("normalizer"));
        }
        if self.reviser.as_ref().is_some_and(Vec::is_empty) {
            return Err(ConfigError::EmptyCommand("reviser"));
        }
        self.exec.validate()?;
        Ok(())
    }

    pub fn knowledge(&self) -> Result<PackageKnowledge, ConfigError> {
        let mut k = PackageKnowledge::bundled();
        if let Some(p) = &self.stdlib_override {
            k = k.with_stdlib_file(p)?;
        }
        if let Some(p) = &self.alias_table {
            k = k.with_alias_file(p)?;
        }
        Ok(k)
    }

    pub fn loop_config(&self) -> Result<LoopConfig, ConfigError> {
        self.validate()?;
        Ok(LoopConfig {
            budget: self.budget,
            exec: self.exec.clone(),
            scan: self.scan.clone(),
            knowledge: self.knowledge()?,
            normalizer: match &self.normalizer {
                Some(cmd) => NormalizerMode::External(cmd.clone()),
                None => NormalizerMode::Rules,
            },
            reviser: self.reviser.clone(),
            reviser_timeout: Duration::from_secs(self.reviser_timeout_secs),
            report_path: self.report.clone(),
            timestamps: self.timestamps,
        })
    }
}
