//! Labeled broken repositories for measuring attribution accuracy.
//!
//! Each case is a bundled template with exactly one injected fault whose
//! kind fixes the ground-truth source.

pub mod mutate;
pub mod templates;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{diagnose, LoopConfig};
use crate::attribution::Source;
use crate::exec::{pass_exec, run_all, ExecConfig};

pub use mutate::{mutate, FaultKind, Files, Mutation};
pub use templates::{template, template_names, Template, TEMPLATES};

pub const MANIFEST: &str = "corpus.json";
pub const MAX_ATTEMPTS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCase {
    /// Directory relative to the corpus root.
    pub dir: String,
    pub fault: FaultSpec,
    pub ground_truth: Source,
    pub base_template: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("template {name} does not pass validation: {detail}")]
    TemplateBroken { name: String, detail: String },
    #[error("case {index}: no failing mutant after {MAX_ATTEMPTS} attempts")]
    NoFailingMutant { index: usize },
    #[error("corpus manifest is malformed: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn template_files(t: &Template) -> Files {
    t.files.iter().map(|(p, c)| (p.to_string(), c.to_string())).collect()
}

pub fn write_tree(dest: &Path, files: &Files) -> io::Result<()> {
    for (rel, text) in files {
        let path = dest.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, text)?;
    }
    Ok(())
}

fn validation_summary(logs: &[crate::exec::RawExecutionLog]) -> String {
    logs.iter()
        .find(|l| !l.succeeded())
        .map(|l| {
            let tail = l.stderr.lines().last().unwrap_or("");
            format!("{} phase failed: {tail}", l.phase.as_str())
        })
        .unwrap_or_else(|| "a phase did not run".into())
}

fn check_template(t: &Template, exec: &ExecConfig) -> Result<(), CorpusError> {
    let dir = tempfile::tempdir()?;
    write_tree(dir.path(), &template_files(t))?;
    let logs = run_all(dir.path(), exec)?;
    if pass_exec(&logs, exec) {
        Ok(())
    } else {
        Err(CorpusError::TemplateBroken {
            name: t.name.to_string(),
            detail: validation_summary(&logs),
        })
    }
}

fn attempt_seed(case_seed: u64, attempt: u32) -> u64 {
    case_seed ^ (attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Template, fault, and mutant chosen by `seed` alone.
pub fn draw_case(seed: u64, templates: &[&'static Template]) -> Option<(&'static Template, FaultKind, Mutation)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = *templates.choose(&mut rng)?;
    let kind = *FaultKind::ALL.choose(&mut rng)?;
    let m = mutate(&template_files(t), kind, &mut rng)?;
    Some((t, kind, m))
}

fn generate_case(
    out_dir: &Path,
    index: usize,
    case_seed: u64,
    templates: &[&'static Template],
    exec: &ExecConfig,
) -> Result<CorpusCase, CorpusError> {
    let dir_name = format!("case-{index:04}");
    let dir = out_dir.join(&dir_name);
    for attempt in 0..MAX_ATTEMPTS {
        let seed = attempt_seed(case_seed, attempt);
        let Some((t, kind, m)) = draw_case(seed, templates) else { continue };
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        write_tree(&dir, &m.files)?;
        let logs = run_all(&dir, exec)?;
        if pass_exec(&logs, exec) {
            continue;
        }
        return Ok(CorpusCase {
            dir: dir_name,
            fault: FaultSpec {
                kind,
                seed,
                target: Some(m.target),
            },
            ground_truth: kind.ground_truth(),
            base_template: t.name.to_string(),
        });
    }
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    Err(CorpusError::NoFailingMutant { index })
}

/// Write `count` single-fault cases plus a manifest under `out_dir`.
/// The same (count, seed, templates) always yields the same bytes.
pub fn generate_corpus(
    out_dir: &Path,
    count: usize,
    seed: u64,
    template_names: &[&str],
    exec: &ExecConfig,
) -> Result<Vec<CorpusCase>, CorpusError> {
    let templates: Vec<&'static Template> = template_names
        .iter()
        .map(|n| template(n).ok_or_else(|| CorpusError::UnknownTemplate(n.to_string())))
        .collect::<Result<_, _>>()?;
    templates.iter().try_for_each(|t| check_template(t, exec))?;
    fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case_seeds: Vec<u64> = (0..count).map(|_| rng.gen()).collect();
    let cases: Vec<CorpusCase> = case_seeds
        .par_iter()
        .enumerate()
        .map(|(i, s)| generate_case(out_dir, i, *s, &templates, exec))
        .collect::<Result<_, _>>()?;
    fs::write(out_dir.join(MANIFEST), crate::canonical::to_json(&cases))?;
    Ok(cases)
}

pub fn read_manifest(corpus_dir: &Path) -> Result<Vec<CorpusCase>, CorpusError> {
    match fs::read_to_string(corpus_dir.join(MANIFEST)) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| CorpusError::Manifest(e.to_string())),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn rate(self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    pub dir: String,
    pub fault: FaultKind,
    pub ground_truth: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// `ok`, or `not-applicable` for an empty corpus.
    pub status: String,
    pub overall: Tally,
    pub per_label: BTreeMap<Source, Tally>,
    pub per_fault: BTreeMap<FaultKind, Tally>,
    /// Ground truth to predicted label to count, over the three sources.
    pub confusion: BTreeMap<Source, BTreeMap<Source, usize>>,
    pub cases: Vec<CaseResult>,
}

const LABELS: [Source; 3] = [Source::ExternalDependency, Source::InternalReference, Source::ResidualLogic];

impl AccuracyReport {
    pub fn from_results(cases: Vec<CaseResult>) -> Self {
        let mut overall = Tally::default();
        let mut per_label: BTreeMap<Source, Tally> = LABELS.iter().map(|l| (*l, Tally::default())).collect();
        let mut per_fault: BTreeMap<FaultKind, Tally> = BTreeMap::new();
        let mut confusion: BTreeMap<Source, BTreeMap<Source, usize>> = LABELS
            .iter()
            .map(|t| (*t, LABELS.iter().map(|p| (*p, 0)).collect()))
            .collect();
        for c in &cases {
            let ok = c.predicted == Some(c.ground_truth);
            for tally in [
                &mut overall,
                per_label.entry(c.ground_truth).or_default(),
                per_fault.entry(c.fault).or_default(),
            ] {
                tally.total += 1;
                tally.correct += ok as usize;
            }
            if let Some(p) = c.predicted.filter(|p| LABELS.contains(p)) {
                *confusion.entry(c.ground_truth).or_default().entry(p).or_default() += 1;
            }
        }
        Self {
            status: if cases.is_empty() { "not-applicable" } else { "ok" }.to_string(),
            overall,
            per_label,
            per_fault,
            confusion,
            cases,
        }
    }

    pub fn to_json(&self) -> String {
        crate::canonical::to_json(self)
    }
}

/// One unrevised iteration per case, compared against the manifest labels.
pub fn evaluate_attribution(corpus_dir: &Path, config: &LoopConfig) -> Result<AccuracyReport, CorpusError> {
    let cases = read_manifest(corpus_dir)?;
    for c in &cases {
        if !crate::scan::is_safe_relative(&c.dir) {
            return Err(CorpusError::Manifest(format!("unsafe case directory {}", c.dir)));
        }
    }
    let results: Vec<CaseResult> = cases
        .par_iter()
        .map(|c| {
            let (predicted, error) = match diagnose(&corpus_dir.join(&c.dir), config) {
                Ok(d) => (Some(d.verdict.source), None),
                Err(e) => (None, Some(e.to_string())),
            };
            CaseResult {
                dir: c.dir.clone(),
                fault: c.fault.kind,
                ground_truth: c.ground_truth,
                predicted,
                error,
            }
        })
        .collect();
    Ok(AccuracyReport::from_results(results))
}
