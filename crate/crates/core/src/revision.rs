//! Planning and applying one revision step.
//!
//! Mechanical repairs (declaring a package, rewriting an import line,
//! creating a package initializer) are applied here. Everything else is
//! handed to a [`Reviser`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{AttributionVerdict, Source};
use crate::env::BuiltEnv;
use crate::evidence::{EvidenceKind, EvidenceRecord};
use crate::exec::run_with_input;
use crate::ext_graph::{find_dependency_gaps, package_node_id, ExternalEnvGraph, GapKind};
use crate::int_graph::{find_unresolved_refs, unresolved_node_id, RepoDependencyGraph};
use crate::manifest::parse_requirement_list;
use crate::scan::is_safe_relative;

/// The manifest mechanical declarations are written to.
pub const PRIMARY_MANIFEST: &str = "requirements.txt";
pub const INITIALIZER: &str = "__init__.py";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "action", content = "payload", rename_all = "kebab-case")]
pub enum Action {
    AddDeclaration {
        package: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        constraint: Option<String>,
    },
    CreatePackageInitializer {
        directory: String,
    },
    RewriteImport {
        old_target: String,
        new_target: String,
        lines: Vec<u32>,
    },
    DelegateToReviser {
        focus: Source,
        evidence: Vec<usize>,
        nodes: Vec<String>,
        instruction: String,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::AddDeclaration { .. } => "add-declaration",
            Action::CreatePackageInitializer { .. } => "create-package-initializer",
            Action::RewriteImport { .. } => "rewrite-import",
            Action::DelegateToReviser { .. } => "delegate-to-reviser",
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Action::AddDeclaration { .. } => 0,
            Action::CreatePackageInitializer { .. } => 1,
            Action::RewriteImport { .. } => 2,
            Action::DelegateToReviser { .. } => 3,
        }
    }

    pub fn is_mechanical(&self) -> bool {
        !matches!(self, Action::DelegateToReviser { .. })
    }

    pub fn admissible_for(&self, source: Source) -> bool {
        match source {
            Source::ExternalDependency => {
                matches!(self, Action::AddDeclaration { .. } | Action::DelegateToReviser { .. })
            }
            Source::InternalReference => !matches!(self, Action::AddDeclaration { .. }),
            Source::ResidualLogic => matches!(self, Action::DelegateToReviser { .. }),
            Source::Pass => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionDirective {
    #[serde(flatten)]
    pub action: Action,
    /// Workspace-relative path of the file the directive edits or creates.
    pub target_file: String,
    /// Hash of `target_file` when planned; absent when the file did not exist.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionPlan {
    pub verdict: AttributionVerdict,
    pub directives: Vec<RevisionDirective>,
}

impl RevisionPlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.directives.is_empty() != (self.verdict.source == Source::Pass) {
            return Err("plan must be empty exactly when the verdict is pass".into());
        }
        for d in &self.directives {
            if !d.action.admissible_for(self.verdict.source) {
                return Err(format!(
                    "{} is not admissible for a {} verdict",
                    d.action.name(),
                    self.verdict.source.as_str()
                ));
            }
            if !is_safe_relative(&d.target_file) && d.target_file != "." {
                return Err(format!("unsafe target path {}", d.target_file));
            }
        }
        if !self.directives.windows(2).all(|w| sort_key(&w[0]) <= sort_key(&w[1])) {
            return Err("directives are not sorted".into());
        }
        Ok(())
    }

    pub fn delegated(&self) -> impl Iterator<Item = &RevisionDirective> {
        self.directives.iter().filter(|d| !d.action.is_mechanical())
    }
}

fn sort_key(d: &RevisionDirective) -> (u8, &str, &Action) {
    (d.action.rank(), d.target_file.as_str(), &d.action)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn snapshot_hash(env: &BuiltEnv, rel: &str) -> Option<String> {
    env.snapshot
        .file(rel)
        .and_then(|f| f.text.as_deref())
        .map(|t| sha256_hex(t.as_bytes()))
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Byte offsets of `target` in `line` where it stands as a whole dotted name.
fn token_positions(line: &str, target: &str) -> Vec<usize> {
    let bytes = line.as_bytes();
    line.match_indices(target)
        .map(|(i, _)| i)
        .filter(|&i| {
            let before = i == 0 || !(is_ident_byte(bytes[i - 1]) || bytes[i - 1] == b'.');
            let end = i + target.len();
            let after = end >= bytes.len() || !(is_ident_byte(bytes[end]) || bytes[end] == b'.');
            before && after
        })
        .collect()
}

fn replace_token(line: &str, old: &str, new: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut last = 0;
    for i in token_positions(line, old) {
        out.push_str(&line[last..i]);
        out.push_str(new);
        last = i + old.len();
    }
    out.push_str(&line[last..]);
    out
}

/// Split keeping terminators, so rejoining reproduces the input byte for byte.
fn split_lines(text: &str) -> Vec<&str> {
    text.split_inclusive('\n').collect()
}

fn line_text<'a>(text: &'a str, line: u32) -> Option<&'a str> {
    split_lines(text).get((line as usize).checked_sub(1)?).copied()
}

fn delegate(
    focus: Source,
    evidence: Vec<usize>,
    nodes: Vec<String>,
    instruction: String,
    records: &[EvidenceRecord],
) -> RevisionDirective {
    let target_file = evidence
        .iter()
        .find_map(|&i| records.get(i).and_then(|r| r.file.clone()))
        .unwrap_or_else(|| ".".to_string());
    RevisionDirective {
        action: Action::DelegateToReviser {
            focus,
            evidence,
            nodes,
            instruction,
        },
        target_file,
        expected_sha256: None,
    }
}

fn plan_external(
    verdict: &AttributionVerdict,
    env: &BuiltEnv,
    evidence: &[EvidenceRecord],
) -> Vec<RevisionDirective> {
    let implicated: BTreeSet<&str> = verdict.supporting_nodes.iter().map(String::as_str).collect();
    let manifest_hash = snapshot_hash(env, PRIMARY_MANIFEST);
    let mut out: Vec<RevisionDirective> = find_dependency_gaps(&env.g_ext)
        .into_iter()
        .filter(|g| g.kind == GapKind::UsedNotDeclared)
        .filter(|g| implicated.contains(package_node_id(&g.package).as_str()))
        .map(|g| RevisionDirective {
            action: Action::AddDeclaration {
                package: g.package,
                constraint: None,
            },
            target_file: PRIMARY_MANIFEST.to_string(),
            expected_sha256: manifest_hash.clone(),
        })
        .collect();
    if out.is_empty() {
        let subjects: Vec<&str> = verdict
            .supporting_evidence
            .iter()
            .filter_map(|&i| evidence[i].subject.as_deref())
            .collect();
        out.push(delegate(
            Source::ExternalDependency,
            verdict.supporting_evidence.clone(),
            verdict.supporting_nodes.clone(),
            format!(
                "Make the external dependencies installable and importable ({}); no undeclared package could be added mechanically.",
                if subjects.is_empty() { "no subject".to_string() } else { subjects.join(", ") }
            ),
            evidence,
        ));
    }
    out
}

fn source_dirs_without_initializer(env: &BuiltEnv) -> BTreeSet<String> {
    let mut dirs_with_sources = BTreeSet::new();
    let mut dirs_with_init = BTreeSet::new();
    for f in env.index.modules.keys() {
        let dir = f.rsplit_once('/').map(|(d, _)| d.to_string()).unwrap_or_default();
        if f.ends_with(&format!("/{INITIALIZER}")) || f == INITIALIZER {
            dirs_with_init.insert(dir.clone());
        }
        dirs_with_sources.insert(dir);
    }
    dirs_with_sources
        .difference(&dirs_with_init)
        .filter(|d| !d.is_empty())
        .cloned()
        .collect()
}

fn plan_internal(
    verdict: &AttributionVerdict,
    env: &BuiltEnv,
    evidence: &[EvidenceRecord],
) -> Vec<RevisionDirective> {
    let implicated: BTreeSet<&str> = verdict.supporting_nodes.iter().map(String::as_str).collect();
    let bare_dirs = source_dirs_without_initializer(env);
    let mut out = Vec::new();
    let mut leftover_nodes = BTreeSet::new();
    let mut initializers = BTreeSet::new();

    for u in find_unresolved_refs(&env.g_int) {
        let node = unresolved_node_id(&u.target);
        if !implicated.contains(node.as_str()) {
            continue;
        }
        let segments: Vec<&str> = u.target.split('.').collect();
        for n in 1..=segments.len() {
            let dir = segments[..n].join("/");
            if bare_dirs.contains(&dir) {
                initializers.insert(dir);
            }
        }
        let Some(best) = &u.best_match else {
            leftover_nodes.insert(node);
            continue;
        };
        let mut lines_by_file: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();
        let mut all_rewritable = true;
        for site in &u.sites {
            let text = env.snapshot.file(&site.file).and_then(|f| f.text.as_deref());
            let on_line = text
                .and_then(|t| line_text(t, site.line))
                .is_some_and(|l| !token_positions(l, &u.target).is_empty());
            if site.relative_level == 0 && on_line {
                lines_by_file.entry(&site.file).or_default().insert(site.line);
            } else {
                all_rewritable = false;
            }
        }
        if !all_rewritable || lines_by_file.is_empty() {
            leftover_nodes.insert(node);
        }
        for (file, lines) in lines_by_file {
            out.push(RevisionDirective {
                action: Action::RewriteImport {
                    old_target: u.target.clone(),
                    new_target: best.module.clone(),
                    lines: lines.into_iter().collect(),
                },
                target_file: file.to_string(),
                expected_sha256: snapshot_hash(env, file),
            });
        }
    }
    for dir in initializers {
        let target = format!("{dir}/{INITIALIZER}");
        out.push(RevisionDirective {
            action: Action::CreatePackageInitializer { directory: dir },
            target_file: target,
            expected_sha256: None,
        });
    }

    let unhandled: Vec<usize> = verdict
        .supporting_evidence
        .iter()
        .copied()
        .filter(|&i| {
            let r = &evidence[i];
            match r.kind {
                EvidenceKind::MissingSymbol | EvidenceKind::ParseFailure => true,
                _ => out.is_empty(),
            }
        })
        .collect();
    for n in &verdict.supporting_nodes {
        if !n.starts_with("unresolved:") {
            leftover_nodes.insert(n.clone());
        }
    }
    if !unhandled.is_empty() || !leftover_nodes.is_empty() || out.is_empty() {
        let what: Vec<String> = unhandled
            .iter()
            .map(|&i| {
                let r = &evidence[i];
                format!("{} {}", r.kind.as_str(), r.subject.as_deref().unwrap_or("-"))
            })
            .collect();
        out.push(delegate(
            Source::InternalReference,
            if unhandled.is_empty() { verdict.supporting_evidence.clone() } else { unhandled },
            leftover_nodes.into_iter().collect(),
            format!(
                "Repair repository-internal references that have no mechanical fix: {}.",
                if what.is_empty() { "see nodes".to_string() } else { what.join("; ") }
            ),
            evidence,
        ));
    }
    out
}

fn plan_residual(verdict: &AttributionVerdict, evidence: &[EvidenceRecord]) -> Vec<RevisionDirective> {
    let failing: Vec<String> = verdict
        .supporting_evidence
        .iter()
        .map(|&i| {
            let r = &evidence[i];
            let at = match (&r.file, r.line) {
                (Some(f), Some(l)) => format!(" at {f}:{l}"),
                (Some(f), None) => format!(" in {f}"),
                _ => String::new(),
            };
            format!("{} during {}{at}", r.kind.as_str(), r.phase.as_str())
        })
        .collect();
    vec![delegate(
        Source::ResidualLogic,
        verdict.supporting_evidence.clone(),
        verdict.supporting_nodes.clone(),
        format!(
            "Dependencies and internal references are consistent; correct the implementation so validation passes ({}).",
            failing.join("; ")
        ),
        evidence,
    )]
}

/// Plan one revision step for `verdict` against the environment it was computed from.
pub fn plan_revision(
    verdict: &AttributionVerdict,
    env: &BuiltEnv,
    evidence: &[EvidenceRecord],
) -> RevisionPlan {
    let mut directives = match verdict.source {
        Source::Pass => Vec::new(),
        Source::ExternalDependency => plan_external(verdict, env, evidence),
        Source::InternalReference => plan_internal(verdict, env, evidence),
        Source::ResidualLogic => plan_residual(verdict, evidence),
    };
    directives.sort_by(|a, b| sort_key(a).cmp(&sort_key(b)));
    directives.dedup();
    RevisionPlan {
        verdict: verdict.clone(),
        directives,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    RequiresReviser,
    StaleSnapshot,
    AlreadySatisfied,
    TargetNotFound,
    IoFailure,
    ReviserFailed,
    ReviserTimeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedDirective {
    pub directive: RevisionDirective,
    pub reason: SkipReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyResult {
    pub applied: Vec<RevisionDirective>,
    pub skipped: Vec<SkippedDirective>,
}

enum Outcome {
    Applied,
    Skipped(SkipReason, Option<String>),
}

fn read_optional(path: &Path) -> io::Result<Option<Vec<u8>>> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let parent = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    if let Ok(meta) = fs::metadata(path) {
        fs::set_permissions(tmp.path(), meta.permissions())?;
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn requirement_line(package: &str, constraint: Option<&str>) -> String {
    match constraint {
        Some(c) => format!("{package}{c}"),
        None => package.to_string(),
    }
}

/// `Some(new contents)` when there is work to do, `None` when already satisfied.
fn edit(action: &Action, current: Option<&str>) -> Result<Option<String>, Outcome> {
    match action {
        Action::AddDeclaration { package, constraint } => {
            let text = current.unwrap_or("");
            let present = parse_requirement_list(text, PRIMARY_MANIFEST)
                .declarations
                .iter()
                .any(|d| &d.package == package);
            if present {
                return Ok(None);
            }
            let mut out = text.to_string();
            if !out.is_empty() && !out.ends_with('\n') {
                out.push('\n');
            }
            out.push_str(&requirement_line(package, constraint.as_deref()));
            out.push('\n');
            Ok(Some(out))
        }
        Action::CreatePackageInitializer { .. } => match current {
            Some(_) => Ok(None),
            None => Ok(Some(String::new())),
        },
        Action::RewriteImport { old_target, new_target, lines } => {
            let Some(text) = current else {
                return Err(Outcome::Skipped(SkipReason::TargetNotFound, Some("file is missing".into())));
            };
            let mut parts: Vec<String> = split_lines(text).into_iter().map(str::to_string).collect();
            let mut changed = false;
            for &n in lines {
                let Some(line) = (n as usize).checked_sub(1).and_then(|i| parts.get_mut(i)) else {
                    return Err(Outcome::Skipped(SkipReason::TargetNotFound, Some(format!("line {n} is missing"))));
                };
                if token_positions(line, old_target).is_empty() {
                    if token_positions(line, new_target).is_empty() {
                        return Err(Outcome::Skipped(
                            SkipReason::TargetNotFound,
                            Some(format!("{old_target} is not on line {n}")),
                        ));
                    }
                    continue;
                }
                *line = replace_token(line, old_target, new_target);
                changed = true;
            }
            Ok(changed.then(|| parts.concat()))
        }
        Action::DelegateToReviser { .. } => Err(Outcome::Skipped(SkipReason::RequiresReviser, None)),
    }
}

fn apply_one(
    d: &RevisionDirective,
    workspace: &Path,
    own_writes: &mut BTreeMap<String, String>,
) -> Outcome {
    if !d.action.is_mechanical() {
        return Outcome::Skipped(SkipReason::RequiresReviser, None);
    }
    if !is_safe_relative(&d.target_file) {
        return Outcome::Skipped(SkipReason::IoFailure, Some("unsafe target path".into()));
    }
    let path = workspace.join(&d.target_file);
    let io_fail = |e: io::Error| Outcome::Skipped(SkipReason::IoFailure, Some(e.to_string()));
    let bytes = match read_optional(&path) {
        Ok(b) => b,
        Err(e) => return io_fail(e),
    };
    let text = match bytes.as_deref().map(std::str::from_utf8).transpose() {
        Ok(t) => t,
        Err(_) => return Outcome::Skipped(SkipReason::IoFailure, Some("file is not UTF-8".into())),
    };
    let new_text = match edit(&d.action, text) {
        Ok(None) => return Outcome::Skipped(SkipReason::AlreadySatisfied, None),
        Ok(Some(t)) => t,
        Err(o) => return o,
    };
    let current_hash = bytes.as_deref().map(sha256_hex);
    let ours = own_writes.get(&d.target_file);
    if current_hash != d.expected_sha256 && current_hash.as_ref() != ours {
        return Outcome::Skipped(SkipReason::StaleSnapshot, None);
    }
    if let Some(parent) = path.parent() {
        if let Err(e) = fs::create_dir_all(parent) {
            return io_fail(e);
        }
    }
    if let Err(e) = write_atomic(&path, new_text.as_bytes()) {
        return io_fail(e);
    }
    own_writes.insert(d.target_file.clone(), sha256_hex(new_text.as_bytes()));
    Outcome::Applied
}

/// Apply the mechanical directives of `plan` to `workspace`, in plan order.
/// Delegated directives are reported as skipped with `requires-reviser`.
pub fn apply_mechanical(plan: &RevisionPlan, workspace: &Path) -> ApplyResult {
    let mut result = ApplyResult::default();
    let mut own_writes = BTreeMap::new();
    for d in &plan.directives {
        match apply_one(d, workspace, &mut own_writes) {
            Outcome::Applied => result.applied.push(d.clone()),
            Outcome::Skipped(reason, detail) => result.skipped.push(SkippedDirective {
                directive: d.clone(),
                reason,
                detail,
            }),
        }
    }
    result
}

/// What a reviser receives on standard input.
#[derive(Debug, Serialize)]
pub struct ReviserRequest<'a> {
    pub workspace: &'a Path,
    pub plan: &'a RevisionPlan,
    pub evidence: &'a [EvidenceRecord],
    pub g_ext: &'a ExternalEnvGraph,
    pub g_int: &'a RepoDependencyGraph,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReviserError {
    #[error("reviser failed: {0}")]
    ProcessFailure(String),
    #[error("reviser timed out")]
    Timeout,
}

/// Edits the workspace in place for delegated directives. Reported changes
/// are never trusted; the loop rescans afterwards.
pub trait Reviser: Send + Sync {
    fn revise(&self, request: &ReviserRequest<'_>) -> Result<(), ReviserError>;
}

/// A local command reading the request as JSON on stdin, with the workspace as cwd.
/// `{workspace}` in any argument is replaced by the workspace path.
#[derive(Debug, Clone)]
pub struct ExternalReviser {
    pub command: Vec<String>,
    pub timeout: Duration,
}

pub fn external_reviser(command: Vec<String>) -> ExternalReviser {
    ExternalReviser {
        command,
        timeout: Duration::from_secs(300),
    }
}

impl Reviser for ExternalReviser {
    fn revise(&self, request: &ReviserRequest<'_>) -> Result<(), ReviserError> {
        let ws = request.workspace.to_string_lossy();
        let argv: Vec<String> = self.command.iter().map(|a| a.replace("{workspace}", &ws)).collect();
        let input = serde_json::to_vec(request).expect("request serializes");
        let out = run_with_input(&argv, &input, request.workspace, self.timeout);
        match out.exit_code {
            Some(0) => Ok(()),
            Some(code) => {
                let tail: String = out.stderr.lines().last().unwrap_or("").chars().take(200).collect();
                Err(ReviserError::ProcessFailure(format!("exit status {code}: {tail}")))
            }
            None => Err(ReviserError::Timeout),
        }
    }
}

/// Wraps a closure as a reviser; handy for scripted fixes.
pub struct FnReviser<F>(pub F);

impl<F> Reviser for FnReviser<F>
where
    F: Fn(&ReviserRequest<'_>) -> Result<(), ReviserError> + Send + Sync,
{
    fn revise(&self, request: &ReviserRequest<'_>) -> Result<(), ReviserError> {
        (self.0)(request)
    }
}

/// Apply mechanical directives, then hand delegated ones to `reviser` if any.
pub fn revise(
    plan: &RevisionPlan,
    workspace: &Path,
    env: &BuiltEnv,
    evidence: &[EvidenceRecord],
    reviser: Option<&dyn Reviser>,
) -> ApplyResult {
    let mut result = apply_mechanical(plan, workspace);
    let Some(reviser) = reviser else {
        return result;
    };
    if plan.delegated().next().is_none() {
        return result;
    }
    let request = ReviserRequest {
        workspace,
        plan,
        evidence,
        g_ext: &env.g_ext,
        g_int: &env.g_int,
    };
    let outcome = reviser.revise(&request);
    let mut remaining = Vec::new();
    for s in result.skipped.drain(..) {
        if s.reason != SkipReason::RequiresReviser {
            remaining.push(s);
            continue;
        }
        match &outcome {
            Ok(()) => result.applied.push(s.directive),
            Err(e) => remaining.push(SkippedDirective {
                directive: s.directive,
                reason: match e {
                    ReviserError::Timeout => SkipReason::ReviserTimeout,
                    ReviserError::ProcessFailure(_) => SkipReason::ReviserFailed,
                },
                detail: Some(e.to_string()),
            }),
        }
    }
    result.skipped = remaining;
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::attribute;
    use crate::evidence::{Confidence, OriginHint};
    use crate::exec::Phase;
    use crate::testutil::{env_of, write_repo};

    fn rec(kind: EvidenceKind, subject: &str, hint: OriginHint, file: Option<&str>) -> EvidenceRecord {
        EvidenceRecord {
            phase: Phase::Launch,
            kind,
            subject: Some(subject.to_string()),
            origin_hint: hint,
            file: file.map(str::to_string),
            line: None,
            frames: vec![],
            excerpt: String::new(),
            confidence: Confidence::Certain,
            occurrences: 1,
        }
    }

    fn client_copy() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        crate::bundle::write_client_fixture(dir.path()).unwrap();
        dir
    }

    fn plan_for(dir: &Path, evidence: &[EvidenceRecord]) -> RevisionPlan {
        let env = env_of(dir);
        let v = attribute(&env.g_ext, &env.g_int, evidence).unwrap();
        let plan = plan_revision(&v, &env, evidence);
        plan.validate().unwrap();
        plan
    }

    #[test]
    fn client_external_plan_declares_requests() {
        let dir = client_copy();
        let ev = [rec(EvidenceKind::MissingModule, "requests", OriginHint::External, Some("src/client.py"))];
        let plan = plan_for(dir.path(), &ev);
        assert_eq!(plan.directives.len(), 1);
        assert_eq!(
            plan.directives[0].action,
            Action::AddDeclaration { package: "requests".into(), constraint: None }
        );
        assert_eq!(plan.directives[0].target_file, "requirements.txt");
        let result = apply_mechanical(&plan, dir.path());
        assert_eq!(result.applied.len(), 1);
        assert_eq!(fs::read_to_string(dir.path().join("requirements.txt")).unwrap(), "requests\n");
        let env = env_of(dir.path());
        assert!(find_dependency_gaps(&env.g_ext).iter().all(|g| g.kind != GapKind::UsedNotDeclared));
    }

    #[test]
    fn client_internal_plan_rewrites_one_line() {
        let dir = client_copy();
        fs::write(dir.path().join("requirements.txt"), "requests\n").unwrap();
        let ev = [rec(EvidenceKind::MissingModule, "app.client", OriginHint::Internal, Some("main.py"))];
        let plan = plan_for(dir.path(), &ev);
        assert_eq!(
            plan.directives,
            [RevisionDirective {
                action: Action::RewriteImport {
                    old_target: "app.client".into(),
                    new_target: "src.client".into(),
                    lines: vec![2],
                },
                target_file: "main.py".into(),
                expected_sha256: Some(sha256_hex(fs::read(dir.path().join("main.py")).unwrap().as_slice())),
            }]
        );
        let before = fs::read_to_string(dir.path().join("main.py")).unwrap();
        apply_mechanical(&plan, dir.path());
        let after = fs::read_to_string(dir.path().join("main.py")).unwrap();
        let diff: Vec<_> = before.lines().zip(after.lines()).filter(|(a, b)| a != b).collect();
        assert_eq!(diff, [("from app.client import APIClient", "from src.client import APIClient")]);
        assert_eq!(before.lines().count(), after.lines().count());
    }

    #[test]
    fn double_apply_is_idempotent() {
        let dir = client_copy();
        let ev = [rec(EvidenceKind::MissingModule, "requests", OriginHint::External, Some("src/client.py"))];
        let plan = plan_for(dir.path(), &ev);
        apply_mechanical(&plan, dir.path());
        let once = fs::read(dir.path().join("requirements.txt")).unwrap();
        let second = apply_mechanical(&plan, dir.path());
        assert!(second.applied.is_empty());
        assert_eq!(second.skipped[0].reason, SkipReason::AlreadySatisfied);
        assert_eq!(fs::read(dir.path().join("requirements.txt")).unwrap(), once);
    }

    #[test]
    fn stale_file_is_skipped() {
        let dir = client_copy();
        fs::write(dir.path().join("requirements.txt"), "requests\n").unwrap();
        let ev = [rec(EvidenceKind::MissingModule, "app.client", OriginHint::Internal, Some("main.py"))];
        let plan = plan_for(dir.path(), &ev);
        fs::write(dir.path().join("main.py"), "# edited\nimport src\nfrom app.client import APIClient\n").unwrap();
        let result = apply_mechanical(&plan, dir.path());
        assert_eq!(result.skipped[0].reason, SkipReason::TargetNotFound);
        fs::write(dir.path().join("main.py"), "import src\nfrom app.client import APIClient\n# edited\n").unwrap();
        let result = apply_mechanical(&plan, dir.path());
        assert_eq!(result.skipped[0].reason, SkipReason::StaleSnapshot);
    }

    #[test]
    fn io_failure_leaves_no_partial_write() {
        let dir = write_repo(&[("main.py", "import pkg.mod\n"), ("pkg/mod.py", "x = 1\n")]);
        let plan = RevisionPlan {
            verdict: AttributionVerdict {
                source: Source::InternalReference,
                fired_rules: vec![],
                supporting_evidence: vec![],
                supporting_nodes: vec![],
                subject: None,
            },
            directives: vec![RevisionDirective {
                action: Action::CreatePackageInitializer { directory: "main.py".into() },
                target_file: "main.py/__init__.py".into(),
                expected_sha256: None,
            }],
        };
        let result = apply_mechanical(&plan, dir.path());
        assert_eq!(result.skipped[0].reason, SkipReason::IoFailure);
        assert_eq!(fs::read_to_string(dir.path().join("main.py")).unwrap(), "import pkg.mod\n");
    }

    #[test]
    fn missing_symbol_is_delegated() {
        let dir = write_repo(&[("main.py", "from pkg.a import g\n"), ("pkg/__init__.py", ""), ("pkg/a.py", "def f():\n    pass\n")]);
        let ev = [rec(EvidenceKind::MissingSymbol, "pkg.a.g", OriginHint::Internal, Some("main.py"))];
        let plan = plan_for(dir.path(), &ev);
        assert_eq!(plan.directives.len(), 1);
        assert!(matches!(
            &plan.directives[0].action,
            Action::DelegateToReviser { focus: Source::InternalReference, .. }
        ));
        assert_eq!(plan.directives[0].target_file, "main.py");
        let result = apply_mechanical(&plan, dir.path());
        assert_eq!(result.skipped[0].reason, SkipReason::RequiresReviser);
    }

    #[test]
    fn residual_plan_is_one_delegation() {
        let dir = write_repo(&[("a.py", "x = 1\n")]);
        let mut r = rec(EvidenceKind::TestAssertionFailure, "x", OriginHint::Unknown, Some("a.py"));
        r.subject = None;
        r.phase = Phase::Test;
        let plan = plan_for(dir.path(), &[r]);
        assert_eq!(plan.directives.len(), 1);
        assert!(matches!(&plan.directives[0].action, Action::DelegateToReviser { focus: Source::ResidualLogic, .. }));
    }

    #[test]
    fn unmatched_relative_import_is_delegated() {
        let dir = write_repo(&[("pkg/__init__.py", ""), ("pkg/a.py", "from .gone import x\n")]);
        let ev = [rec(EvidenceKind::MissingModule, "pkg.gone", OriginHint::Internal, Some("pkg/a.py"))];
        let plan = plan_for(dir.path(), &ev);
        assert!(plan.directives.iter().all(|d| !d.action.is_mechanical()));
    }

    #[test]
    fn initializer_for_bare_directory() {
        let dir = write_repo(&[("main.py", "import lib.util.nope\n"), ("lib/util/helpers.py", "x = 1\n")]);
        let ev = [rec(EvidenceKind::MissingModule, "lib.util.nope", OriginHint::Internal, Some("main.py"))];
        let plan = plan_for(dir.path(), &ev);
        let inits: Vec<_> = plan
            .directives
            .iter()
            .filter(|d| matches!(d.action, Action::CreatePackageInitializer { .. }))
            .map(|d| d.target_file.as_str())
            .collect();
        assert_eq!(inits, ["lib/util/__init__.py"]);
        apply_mechanical(&plan, dir.path());
        assert_eq!(fs::read(dir.path().join("lib/util/__init__.py")).unwrap(), b"");
    }

    #[test]
    fn directive_json_shape() {
        let d = RevisionDirective {
            action: Action::AddDeclaration { package: "requests".into(), constraint: None },
            target_file: "requirements.txt".into(),
            expected_sha256: None,
        };
        let v = serde_json::to_value(&d).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"action": "add-declaration", "payload": {"package": "requests"}, "target_file": "requirements.txt"})
        );
        assert_eq!(serde_json::from_value::<RevisionDirective>(v).unwrap(), d);
    }

    #[test]
    fn token_boundaries() {
        assert_eq!(replace_token("from app.client import app", "app.client", "src.client"), "from src.client import app");
        assert_eq!(replace_token("import myapp.client", "app.client", "x"), "import myapp.client");
        assert_eq!(replace_token("import app.client.sub", "app.client", "x"), "import app.client.sub");
    }

    #[test]
    fn reviser_outcomes_are_recorded() {
        let dir = write_repo(&[("a.py", "x = 1\n")]);
        let env = env_of(dir.path());
        let mut r = rec(EvidenceKind::TestAssertionFailure, "x", OriginHint::Unknown, Some("a.py"));
        r.subject = None;
        let ev = [r];
        let v = attribute(&env.g_ext, &env.g_int, &ev).unwrap();
        let plan = plan_revision(&v, &env, &ev);
        let ok = FnReviser(|req: &ReviserRequest<'_>| {
            fs::write(req.workspace.join("a.py"), "x = 2\n").map_err(|e| ReviserError::ProcessFailure(e.to_string()))
        });
        let result = revise(&plan, dir.path(), &env, &ev, Some(&ok));
        assert_eq!(result.applied.len(), 1);
        assert_eq!(fs::read_to_string(dir.path().join("a.py")).unwrap(), "x = 2\n");

        let failing = external_reviser(vec!["python3".into(), "-c".into(), "import sys; sys.exit(3)".into()]);
        let result = revise(&plan, dir.path(), &env, &ev, Some(&failing));
        assert_eq!(result.skipped[0].reason, SkipReason::ReviserFailed);
    }

    #[test]
    fn external_reviser_sees_request_in_workspace() {
        let dir = write_repo(&[("a.py", "x = 1\n")]);
        let env = env_of(dir.path());
        let mut r = rec(EvidenceKind::TestAssertionFailure, "x", OriginHint::Unknown, Some("a.py"));
        r.subject = None;
        let ev = [r];
        let v = attribute(&env.g_ext, &env.g_int, &ev).unwrap();
        let plan = plan_revision(&v, &env, &ev);
        let script = "import json, sys; req = json.load(sys.stdin); open('seen.txt', 'w').write(req['plan']['verdict']['source'])";
        let reviser = external_reviser(vec!["python3".into(), "-c".into(), script.into()]);
        let result = revise(&plan, dir.path(), &env, &ev, Some(&reviser));
        assert!(result.skipped.is_empty());
        assert_eq!(fs::read_to_string(dir.path().join("seen.txt")).unwrap(), "residual-logic");
    }
}
