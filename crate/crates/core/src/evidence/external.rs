use std::path::PathBuf;
use std::time::Duration;

use serde::Serialize;

use super::{validate_records, NormalizeOutput, Normalizer, RuleNormalizer};
use crate::exec::{run_with_input, RawExecutionLog};
use crate::ext_graph::ExternalEnvGraph;
use crate::int_graph::RepoDependencyGraph;

#[derive(Serialize)]
struct Request<'a> {
    logs: &'a [RawExecutionLog],
    g_ext: &'a ExternalEnvGraph,
    g_int: &'a RepoDependencyGraph,
}

/// Runs a local command that reads `{"logs","g_ext","g_int"}` as JSON on
/// standard input and prints a JSON array of evidence records.
#[derive(Debug, Clone)]
pub struct ExternalNormalizer {
    pub command: Vec<String>,
    pub timeout: Duration,
    pub cwd: PathBuf,
    pub fallback: RuleNormalizer,
}

impl ExternalNormalizer {
    pub fn new(command: Vec<String>, fallback: RuleNormalizer) -> Self {
        Self {
            command,
            timeout: Duration::from_secs(120),
            cwd: std::env::temp_dir(),
            fallback,
        }
    }

    fn fall_back(
        &self,
        reason: String,
        logs: &[RawExecutionLog],
        g_ext: &ExternalEnvGraph,
        g_int: &RepoDependencyGraph,
    ) -> NormalizeOutput {
        let mut out = self.fallback.normalize(logs, g_ext, g_int);
        out.warnings.insert(0, format!("external normalizer: {reason}; used rule-based output"));
        out
    }
}

impl Normalizer for ExternalNormalizer {
    fn normalize(
        &self,
        logs: &[RawExecutionLog],
        g_ext: &ExternalEnvGraph,
        g_int: &RepoDependencyGraph,
    ) -> NormalizeOutput {
        let input = serde_json::to_vec(&Request { logs, g_ext, g_int }).expect("request serializes");
        let outcome = run_with_input(&self.command, &input, &self.cwd, self.timeout);
        match outcome.exit_code {
            Some(0) => {}
            Some(code) => return self.fall_back(format!("exited with status {code}"), logs, g_ext, g_int),
            None => return self.fall_back("timed out".into(), logs, g_ext, g_int),
        }
        let values: Vec<serde_json::Value> = match serde_json::from_str(&outcome.stdout) {
            Ok(v) => v,
            Err(e) => return self.fall_back(format!("output is not a JSON array: {e}"), logs, g_ext, g_int),
        };
        let mut warnings = Vec::new();
        let mut records = Vec::new();
        let mut index_map = Vec::new();
        for (i, value) in values.into_iter().enumerate() {
            match serde_json::from_value(value) {
                Ok(r) => {
                    records.push(r);
                    index_map.push(i);
                }
                Err(e) => warnings.push(format!("evidence record {i} rejected: {e}")),
            }
        }
        let (records, violations) = validate_records(records, logs, g_int, &self.fallback.knowledge);
        for v in violations {
            warnings.push(format!("evidence record {} rejected: {}", index_map[v.index], v.reason));
        }
        let failing = logs.iter().any(|l| !l.succeeded());
        if failing && records.is_empty() {
            let mut out = self.fall_back("no valid records for failing logs".into(), logs, g_ext, g_int);
            out.warnings.splice(0..0, warnings);
            return out;
        }
        NormalizeOutput { records, warnings }
    }
}
