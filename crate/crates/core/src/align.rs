//! The iterative alignment loop: build, execute, attribute, revise, repeat.

use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::attribution::{attribute, AttributionVerdict, Source};
use crate::env::{build_env, BuiltEnv};
use crate::evidence::{EvidenceRecord, ExternalNormalizer, Normalizer, RuleNormalizer};
use crate::exec::{pass_exec, run_all, ExecConfig, RawExecutionLog};
use crate::knowledge::PackageKnowledge;
use crate::revision::{external_reviser, plan_revision, revise, ApplyResult, RevisionPlan, Reviser};
use crate::scan::{scan_repository, ScanConfig};

pub const DEFAULT_BUDGET: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "command")]
pub enum NormalizerMode {
    #[default]
    Rules,
    External(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub budget: u32,
    pub exec: ExecConfig,
    pub scan: ScanConfig,
    pub knowledge: PackageKnowledge,
    pub normalizer: NormalizerMode,
    /// Command run for delegated directives; none means they stay unapplied.
    pub reviser: Option<Vec<String>>,
    pub reviser_timeout: Duration,
    pub report_path: Option<PathBuf>,
    /// Keep durations and wall-clock stamps in the report.
    pub timestamps: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            exec: ExecConfig::default(),
            scan: ScanConfig::default(),
            knowledge: PackageKnowledge::bundled(),
            normalizer: NormalizerMode::Rules,
            reviser: None,
            reviser_timeout: Duration::from_secs(300),
            report_path: None,
            timestamps: false,
        }
    }
}

impl LoopConfig {
    pub fn normalizer(&self) -> Box<dyn Normalizer> {
        let rules = RuleNormalizer::new(self.knowledge.clone());
        match &self.normalizer {
            NormalizerMode::Rules => Box::new(rules),
            NormalizerMode::External(cmd) => Box::new(ExternalNormalizer::new(cmd.clone(), rules)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: u32,
    pub snapshot_digest: String,
    pub g_ext_digest: String,
    pub g_int_digest: String,
    pub logs: Vec<RawExecutionLog>,
    pub evidence: Vec<EvidenceRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<AttributionVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<RevisionPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apply_result: Option<ApplyResult>,
    /// Snapshot digest after revision; the next iteration starts from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_revision_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    BudgetExhausted,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTimestamps {
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentRunReport {
    pub budget: u32,
    pub iterations: Vec<IterationRecord>,
    pub outcome: Outcome,
    /// Snapshot digest of the repository as left by the run.
    pub final_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<RunTimestamps>,
}

impl AlignmentRunReport {
    pub fn verdicts(&self) -> Vec<Option<Source>> {
        self.iterations
            .iter()
            .map(|it| it.verdict.as_ref().map(|v| v.source))
            .collect()
    }

    pub fn to_json(&self) -> String {
        crate::canonical::to_json(self)
    }

    /// Check the loop contract; returns every violation found.
    pub fn contract_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.iterations.is_empty() && self.outcome != Outcome::Aborted {
            v.push("no iterations".into());
        }
        if self.iterations.len() > self.budget as usize {
            v.push(format!("{} iterations exceed budget {}", self.iterations.len(), self.budget));
        }
        for (i, it) in self.iterations.iter().enumerate() {
            if it.index as usize != i + 1 {
                v.push(format!("iteration {} has index {}", i + 1, it.index));
            }
            let pass = it.verdict.as_ref().is_some_and(|v| v.source == Source::Pass);
            if pass && i + 1 != self.iterations.len() {
                v.push(format!("iteration {} passed but the loop continued", it.index));
            }
            if pass && (it.plan.is_some() || it.apply_result.is_some()) {
                v.push(format!("iteration {} passed yet revised", it.index));
            }
            if let Some(verdict) = it.verdict.as_ref().filter(|_| !pass) {
                match &it.plan {
                    Some(p) if &p.verdict == verdict => {
                        if let Err(e) = p.validate() {
                            v.push(format!("iteration {}: {e}", it.index));
                        }
                    }
                    Some(_) => v.push(format!("iteration {} plan verdict differs", it.index)),
                    None if it.error.is_none() => v.push(format!("iteration {} has no plan", it.index)),
                    None => {}
                }
            }
            if let Some(next) = self.iterations.get(i + 1) {
                if it.post_revision_digest.as_deref() != Some(next.snapshot_digest.as_str()) {
                    v.push(format!("digest chain broken between {} and {}", it.index, next.index));
                }
            }
        }
        let last_pass = self
            .iterations
            .last()
            .and_then(|it| it.verdict.as_ref())
            .is_some_and(|v| v.source == Source::Pass);
        if (self.outcome == Outcome::Success) != last_pass {
            v.push("outcome disagrees with last verdict".into());
        }
        v
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

struct Step {
    record: IterationRecord,
    passed: bool,
    fatal: bool,
}

fn iterate(
    index: u32,
    env: &BuiltEnv,
    workspace: &Path,
    config: &LoopConfig,
    normalizer: &dyn Normalizer,
    reviser: Option<&dyn Reviser>,
) -> Step {
    let mut record = IterationRecord {
        index,
        snapshot_digest: env.snapshot.digest.clone(),
        g_ext_digest: env.g_ext.digest(),
        g_int_digest: env.g_int.digest(),
        logs: Vec::new(),
        evidence: Vec::new(),
        warnings: Vec::new(),
        verdict: None,
        plan: None,
        apply_result: None,
        post_revision_digest: None,
        error: None,
    };
    let fail = |mut record: IterationRecord, e: String| Step {
        record: {
            record.error = Some(e);
            record
        },
        passed: false,
        fatal: true,
    };

    let mut logs = match run_all(workspace, &config.exec) {
        Ok(l) => l,
        Err(e) => return fail(record, format!("execution failed: {e}")),
    };
    if !config.timestamps {
        for l in &mut logs {
            l.duration_ms = None;
        }
    }
    if pass_exec(&logs, &config.exec) {
        record.logs = logs;
        record.verdict = Some(attribute(&env.g_ext, &env.g_int, &[]).expect("empty evidence is consistent"));
        return Step { record, passed: true, fatal: false };
    }

    let normalized = normalizer.normalize(&logs, &env.g_ext, &env.g_int);
    record.logs = logs;
    record.warnings = normalized.warnings;
    record.evidence = normalized.records;
    if record.evidence.is_empty() {
        return fail(record, "validation failed but no evidence was produced".into());
    }
    let verdict = match attribute(&env.g_ext, &env.g_int, &record.evidence) {
        Ok(v) => v,
        Err(e) => return fail(record, format!("attribution failed: {e}")),
    };
    let plan = plan_revision(&verdict, env, &record.evidence);
    let applied = revise(&plan, workspace, env, &record.evidence, reviser);
    record.verdict = Some(verdict);
    record.plan = Some(plan);
    record.apply_result = Some(applied);
    match scan_repository(workspace, &config.scan) {
        Ok(s) => record.post_revision_digest = Some(s.digest),
        Err(e) => return fail(record, format!("rescan failed: {e}")),
    }
    Step { record, passed: false, fatal: false }
}

/// One pass without revision: build, execute, normalize, attribute.
#[derive(Debug, Clone)]
pub struct Diagnosis {
    pub env: BuiltEnv,
    pub logs: Vec<RawExecutionLog>,
    pub evidence: Vec<EvidenceRecord>,
    pub warnings: Vec<String>,
    pub verdict: AttributionVerdict,
}

#[derive(Debug, thiserror::Error)]
pub enum DiagnoseError {
    #[error(transparent)]
    Scan(#[from] crate::scan::ScanError),
    #[error("execution failed: {0}")]
    Exec(#[from] std::io::Error),
    #[error(transparent)]
    Attribution(#[from] crate::attribution::AttributionError),
    #[error("validation failed but no evidence was produced")]
    NoEvidence,
}

pub fn diagnose(workspace: &Path, config: &LoopConfig) -> Result<Diagnosis, DiagnoseError> {
    let env = build_env(workspace, &config.scan, &config.knowledge)?;
    let mut logs = run_all(workspace, &config.exec)?;
    if !config.timestamps {
        for l in &mut logs {
            l.duration_ms = None;
        }
    }
    let (evidence, warnings) = if pass_exec(&logs, &config.exec) {
        (Vec::new(), Vec::new())
    } else {
        let out = config.normalizer().normalize(&logs, &env.g_ext, &env.g_int);
        if out.records.is_empty() {
            return Err(DiagnoseError::NoEvidence);
        }
        (out.records, out.warnings)
    };
    let verdict = attribute(&env.g_ext, &env.g_int, &evidence)?;
    Ok(Diagnosis { env, logs, evidence, warnings, verdict })
}

/// Run the loop with an explicit reviser in place of the configured command.
pub fn align_with(workspace: &Path, config: &LoopConfig, reviser: Option<&dyn Reviser>) -> AlignmentRunReport {
    let started = now_ms();
    let normalizer = config.normalizer();
    let mut iterations = Vec::new();
    let mut outcome = Outcome::BudgetExhausted;
    let mut error = None;
    let budget = config.budget.max(1);
    for index in 1..=budget {
        let env = match build_env(workspace, &config.scan, &config.knowledge) {
            Ok(e) => e,
            Err(e) => {
                outcome = Outcome::Aborted;
                error = Some(format!("workspace scan failed: {e}"));
                break;
            }
        };
        let step = iterate(index, &env, workspace, config, normalizer.as_ref(), reviser);
        iterations.push(step.record);
        if step.passed {
            outcome = Outcome::Success;
            break;
        }
        if step.fatal {
            outcome = Outcome::Aborted;
            error = iterations.last().and_then(|it| it.error.clone());
            break;
        }
    }
    let final_digest = scan_repository(workspace, &config.scan)
        .map(|s| s.digest)
        .unwrap_or_default();
    AlignmentRunReport {
        budget,
        iterations,
        outcome,
        final_digest,
        error,
        timestamps: config.timestamps.then(|| RunTimestamps {
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
        }),
    }
}

/// Align `workspace` in place. Writes the report when `report_path` is set.
pub fn align(workspace: &Path, config: &LoopConfig) -> std::io::Result<AlignmentRunReport> {
    let reviser = config.reviser.as_ref().map(|cmd| {
        let mut r = external_reviser(cmd.clone());
        r.timeout = config.reviser_timeout;
        r
    });
    let report = align_with(workspace, config, reviser.as_ref().map(|r| r as &dyn Reviser));
    if let Some(path) = &config.report_path {
        write_report(&report, path)?;
    }
    Ok(report)
}

pub fn write_report(report: &AlignmentRunReport, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, report.to_json())
}
