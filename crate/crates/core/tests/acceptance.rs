//! Acceptance criteria 1-7. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits non-zero if any failed.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use envalign::align::{align_with, diagnose, LoopConfig, Outcome};
use envalign::attribution::{attribute, external_satisfiable, internal_resolved, Source};
use envalign::corpus::mutate::FaultKind;
use envalign::corpus::{
    draw_case, evaluate_attribution, generate_corpus, read_manifest, template, template_names, write_tree,
};
use envalign::env::build_env;
use envalign::evidence::{Confidence, EvidenceKind, EvidenceRecord, OriginHint, StackFrame};
use envalign::exec::{ExecConfig, Phase};
use envalign::ext_graph::{find_dependency_gaps, GapKind};
use envalign::int_graph::{find_unresolved_refs, IntNodeKind};
use envalign::knowledge::PackageKnowledge;
use envalign::revision::{apply_mechanical, plan_revision, Action};
use envalign::scan::{scan_repository, ScanConfig};

use common::{copy_tree, gen_repo, read_tree, GenRepo, Oracle};

const CORPUS_SEED: u64 = 7;
const CORPUS_SIZE: usize = 200;

type Check = Result<String, String>;

struct Shared {
    corpus: Option<tempfile::TempDir>,
}

fn launch_only() -> LoopConfig {
    LoopConfig {
        exec: ExecConfig::default().with_phases(&[Phase::Install, Phase::Launch]),
        ..LoopConfig::default()
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn criterion_1(_: &mut Shared) -> Check {
    let dir = tempfile::tempdir().unwrap();
    copy_tree(&common::client_fixture(), dir.path());
    let start = Instant::now();
    let report = align_with(dir.path(), &launch_only(), None);
    let elapsed = start.elapsed();
    let trace: Vec<(Option<Source>, Option<String>)> = report
        .iterations
        .iter()
        .map(|it| {
            let v = it.verdict.as_ref();
            (v.map(|v| v.source), v.and_then(|v| v.subject.clone()))
        })
        .collect();
    let expected = vec![
        (Some(Source::ExternalDependency), Some("requests".to_string())),
        (Some(Source::InternalReference), Some("app.client".to_string())),
        (Some(Source::Pass), None),
    ];
    ensure(trace == expected, || format!("trace {trace:?}"))?;
    ensure(report.outcome == Outcome::Success, || format!("outcome {:?}", report.outcome))?;
    ensure(report.contract_violations().is_empty(), || format!("{:?}", report.contract_violations()))?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "external-dependency(requests) -> internal-reference(app.client) -> pass in {:.2}s",
        elapsed.as_secs_f64()
    ))
}

type Keyed = BTreeMap<String, (BTreeSet<String>, BTreeSet<String>)>;

fn library_gaps(g: &envalign::ext_graph::ExternalEnvGraph) -> Keyed {
    find_dependency_gaps(g)
        .into_iter()
        .filter(|gap| gap.kind == GapKind::UsedNotDeclared)
        .map(|gap| {
            let names = g
                .node(&format!("package:{}", gap.package))
                .map(|n| n.attrs.import_names.iter().cloned().collect())
                .unwrap_or_default();
            (gap.package, (names, gap.using_files.into_iter().collect()))
        })
        .collect()
}

fn library_unresolved(g: &envalign::int_graph::RepoDependencyGraph) -> Keyed {
    find_unresolved_refs(g)
        .into_iter()
        .map(|u| {
            (
                u.target,
                (u.importing_modules.into_iter().collect(), u.sites.into_iter().map(|s| s.file).collect()),
            )
        })
        .collect()
}

fn criterion_2(_: &mut Shared) -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut gaps, mut unresolved, mut mismatches) = (0, 0, Vec::new());
    for i in 0..100 {
        let repo = gen_repo(&mut rng, 20, true);
        let dir = tempfile::tempdir().unwrap();
        repo.write(dir.path());
        let env = build_env(dir.path(), &ScanConfig::default(), &PackageKnowledge::bundled()).unwrap();
        if env.snapshot.files.len() > 20 {
            mismatches.push(format!("repo {i}: {} files", env.snapshot.files.len()));
        }
        let oracle = Oracle::new(&repo);
        let (want_gaps, want_unres) = (oracle.gaps(&repo), oracle.unresolved(&repo));
        let (got_gaps, got_unres) = (library_gaps(&env.g_ext), library_unresolved(&env.g_int));
        if want_gaps != got_gaps {
            mismatches.push(format!("repo {i} gaps: oracle {want_gaps:?} library {got_gaps:?}"));
        }
        if want_unres != got_unres {
            mismatches.push(format!("repo {i} unresolved: oracle {want_unres:?} library {got_unres:?}"));
        }
        let got_pe: BTreeSet<String> = env
            .g_int
            .nodes_of(IntNodeKind::ParseError)
            .filter_map(|n| n.attrs.path.clone())
            .collect();
        if got_pe != oracle.parse_errors(&repo) {
            mismatches.push(format!("repo {i} parse errors: {got_pe:?}"));
        }
        gaps += want_gaps.len();
        unresolved += want_unres.len();
    }
    let elapsed = start.elapsed();
    ensure(mismatches.is_empty(), || mismatches.join("\n    "))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "100 repos, {gaps} gaps and {unresolved} unresolved refs match the oracles in {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn criterion_3(shared: &mut Shared) -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let names = template_names();
    generate_corpus(dir.path(), CORPUS_SIZE, CORPUS_SEED, &names, &ExecConfig::default())
        .map_err(|e| format!("generation failed: {e}"))?;
    let generated = start.elapsed();
    let report = evaluate_attribution(dir.path(), &LoopConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    shared.corpus = Some(dir);

    let labels = [Source::ExternalDependency, Source::InternalReference, Source::ResidualLogic];
    println!("    confusion matrix (rows: ground truth, columns: predicted)");
    println!("    {:<22}{:>10}{:>10}{:>10}", "", "external", "internal", "residual");
    for gt in labels {
        let row = report.confusion.get(&gt);
        let cell = |p: Source| row.and_then(|r| r.get(&p)).copied().unwrap_or(0);
        println!(
            "    {:<22}{:>10}{:>10}{:>10}",
            gt.as_str(),
            cell(Source::ExternalDependency),
            cell(Source::InternalReference),
            cell(Source::ResidualLogic)
        );
    }
    for (kind, t) in &report.per_fault {
        println!("    {:<24}{}/{}", kind.as_str(), t.correct, t.total);
    }
    println!("    generation {:.1}s, evaluation {:.1}s", generated.as_secs_f64(), (elapsed - generated).as_secs_f64());

    let kinds: BTreeSet<FaultKind> = report.per_fault.keys().copied().collect();
    ensure(kinds.len() == FaultKind::ALL.len(), || format!("only {} fault kinds present", kinds.len()))?;
    ensure(report.overall.total == CORPUS_SIZE, || format!("{} cases evaluated", report.overall.total))?;
    let overall = report.overall.rate().unwrap_or(0.0);
    ensure(overall >= 0.95, || format!("overall accuracy {:.3}", overall))?;
    let logic = report.per_fault.get(&FaultKind::InjectLogicFault).copied().unwrap_or_default();
    ensure(logic.total > 0 && logic.correct == logic.total, || {
        format!("logic faults {}/{}", logic.correct, logic.total)
    })?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{}/{} correct ({:.1}%), logic faults {}/{}, in {:.1}s",
        report.overall.correct,
        report.overall.total,
        overall * 100.0,
        logic.correct,
        logic.total,
        elapsed.as_secs_f64()
    ))
}

const KINDS: [EvidenceKind; 8] = [
    EvidenceKind::DependencyInstallFailure,
    EvidenceKind::MissingModule,
    EvidenceKind::MissingSymbol,
    EvidenceKind::ParseFailure,
    EvidenceKind::TestAssertionFailure,
    EvidenceKind::RuntimeExceptionOther,
    EvidenceKind::Timeout,
    EvidenceKind::NonzeroExitOther,
];

fn random_evidence(rng: &mut ChaCha8Rng, repo: &GenRepo, oracle: &Oracle) -> Vec<EvidenceRecord> {
    let files = repo.file_paths();
    let mut subjects: Vec<String> = vec!["zzz.q".into(), "app.client".into()];
    subjects.extend(common::EXTERNAL.iter().map(|s| s.to_string()));
    subjects.extend(common::EXTERNAL.iter().map(|s| format!("{s}.sub")));
    subjects.extend(oracle.defined.iter().cloned());
    for t in oracle.unresolved(repo).into_keys() {
        subjects.push(format!("{t}.attr"));
        subjects.push(t.split('.').next().unwrap().to_string());
        subjects.push(t);
    }
    let n = rng.gen_range(0..=4);
    (0..n)
        .map(|_| {
            let frames = (0..rng.gen_range(0..=2))
                .map(|_| {
                    if rng.gen_bool(0.7) {
                        StackFrame { file: files.choose(rng).unwrap().clone(), line: 1, scope: "<module>".into(), in_repo: true }
                    } else {
                        StackFrame { file: "/usr/lib/python3/x.py".into(), line: 9, scope: "f".into(), in_repo: false }
                    }
                })
                .collect();
            EvidenceRecord {
                phase: *[Phase::Install, Phase::Launch, Phase::Test].choose(rng).unwrap(),
                kind: *KINDS.choose(rng).unwrap(),
                subject: rng.gen_bool(0.8).then(|| subjects.choose(rng).unwrap().clone()),
                origin_hint: *[OriginHint::External, OriginHint::Internal, OriginHint::Unknown].choose(rng).unwrap(),
                file: rng.gen_bool(0.5).then(|| files.choose(rng).unwrap().clone()),
                line: None,
                frames,
                excerpt: String::new(),
                confidence: Confidence::Heuristic,
                occurrences: 1,
            }
        })
        .collect()
}

fn touched(r: &EvidenceRecord) -> BTreeSet<&str> {
    r.file
        .iter()
        .map(String::as_str)
        .chain(r.frames.iter().filter(|f| f.in_repo).map(|f| f.file.as_str()))
        .collect()
}

fn subject_matches(subject: &str, target: &str) -> bool {
    subject == target || target.starts_with(&format!("{subject}.")) || subject.starts_with(&format!("{target}."))
}

fn external_predicate(ev: &[EvidenceRecord], gaps: &Keyed) -> bool {
    ev.iter().any(|r| {
        r.kind == EvidenceKind::DependencyInstallFailure
            || (r.kind == EvidenceKind::MissingModule && r.origin_hint != OriginHint::Internal)
            || (matches!(r.phase, Phase::Launch | Phase::Test)
                && gaps.iter().any(|(pkg, (names, users))| {
                    let by_subject = r.subject.as_deref().is_some_and(|s| {
                        let h = s.split('.').next().unwrap();
                        names.contains(h) || common::normalize(h) == *pkg
                    });
                    by_subject || users.iter().any(|u| touched(r).contains(u.as_str()))
                }))
    })
}

fn internal_predicate(ev: &[EvidenceRecord], unresolved: &Keyed, parse_errors: &BTreeSet<String>) -> bool {
    ev.iter().any(|r| {
        let t = touched(r);
        (r.kind == EvidenceKind::MissingModule && r.origin_hint == OriginHint::Internal)
            || matches!(r.kind, EvidenceKind::MissingSymbol | EvidenceKind::ParseFailure)
            || unresolved.iter().any(|(target, (_, sites))| {
                r.subject.as_deref().is_some_and(|s| subject_matches(s, target))
                    || sites.iter().any(|f| t.contains(f.as_str()))
            })
            || parse_errors.iter().any(|p| t.contains(p.as_str()))
    })
}

fn criterion_4(_: &mut Shared) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = Vec::new();
    let mut by_source: BTreeMap<Source, usize> = BTreeMap::new();
    for r in 0..100 {
        let repo = gen_repo(&mut rng, 20, true);
        let dir = tempfile::tempdir().unwrap();
        repo.write(dir.path());
        let env = build_env(dir.path(), &ScanConfig::default(), &PackageKnowledge::bundled()).unwrap();
        let oracle = Oracle::new(&repo);
        let (gaps, unresolved, pe) = (oracle.gaps(&repo), oracle.unresolved(&repo), oracle.parse_errors(&repo));
        for c in 0..10 {
            let ev = random_evidence(&mut rng, &repo, &oracle);
            let ext = external_predicate(&ev, &gaps);
            let int = internal_predicate(&ev, &unresolved, &pe);
            let verdict = match attribute(&env.g_ext, &env.g_int, &ev) {
                Ok(v) => v,
                Err(e) => {
                    violations.push(format!("combo {r}/{c}: {e}"));
                    continue;
                }
            };
            let expected = if ev.is_empty() {
                Source::Pass
            } else if ext {
                Source::ExternalDependency
            } else if int {
                Source::InternalReference
            } else {
                Source::ResidualLogic
            };
            *by_source.entry(verdict.source).or_default() += 1;
            if verdict.source != expected {
                violations.push(format!("combo {r}/{c}: expected {expected:?}, got {:?} for {ev:?}", verdict.source));
            }
            if external_satisfiable(&env.g_ext, &ev) == ext || internal_resolved(&env.g_int, &ev) == int {
                violations.push(format!("combo {r}/{c}: clause predicates disagree with the oracle"));
            }
        }
    }
    ensure(violations.is_empty(), || format!("{} violations:\n    {}", violations.len(), violations.join("\n    ")))?;
    Ok(format!("1000 combinations, zero violations, verdict counts {by_source:?}"))
}

fn criterion_5(shared: &mut Shared) -> Check {
    let corpus = shared.corpus.as_ref().ok_or("corpus from criterion 3 is unavailable")?;
    let cases = read_manifest(corpus.path()).map_err(|e| e.to_string())?;
    let config = LoopConfig { budget: 4, ..LoopConfig::default() };
    let mut violations = Vec::new();
    let mut outcomes: BTreeMap<String, usize> = BTreeMap::new();
    for case in &cases {
        let dir = tempfile::tempdir().unwrap();
        copy_tree(&corpus.path().join(&case.dir), dir.path());
        let report = align_with(dir.path(), &config, None);
        *outcomes.entry(format!("{:?}", report.outcome)).or_default() += 1;
        let mut v = report.contract_violations();
        let n = report.iterations.len();
        if n == 0 || n > 4 {
            v.push(format!("{n} iterations"));
        }
        if report.outcome == Outcome::Aborted {
            v.push(format!("aborted: {:?}", report.error));
        }
        for (i, it) in report.iterations.iter().enumerate() {
            let source = it.verdict.as_ref().map(|v| v.source);
            if source == Some(Source::Pass) && i + 1 != n {
                v.push(format!("pass at {} without early exit", it.index));
            }
            if let (Some(verdict), Some(plan)) = (&it.verdict, &it.plan) {
                if &plan.verdict != verdict || plan.directives.iter().any(|d| !d.action.admissible_for(verdict.source)) {
                    v.push(format!("iteration {} plan incoherent with verdict", it.index));
                }
            }
            if let Some(next) = report.iterations.get(i + 1) {
                if it.post_revision_digest.as_deref() != Some(next.snapshot_digest.as_str()) {
                    v.push(format!("digest chain broken after {}", it.index));
                }
            }
        }
        let on_disk = scan_repository(dir.path(), &ScanConfig::default()).unwrap().digest;
        if report.final_digest != on_disk {
            v.push("final digest differs from the workspace".into());
        }
        if report.outcome == Outcome::BudgetExhausted && n != 4 {
            v.push(format!("budget exhausted after {n} iterations"));
        }
        violations.extend(v.into_iter().map(|m| format!("{}: {m}", case.dir)));
    }
    ensure(!cases.is_empty(), || "empty corpus".into())?;
    ensure(violations.is_empty(), || violations.join("\n    "))?;
    Ok(format!("{} runs under budget 4, zero violations, outcomes {outcomes:?}", cases.len()))
}

fn check_application(
    directive: &envalign::revision::RevisionDirective,
    before: &BTreeMap<String, Vec<u8>>,
    after: &BTreeMap<String, Vec<u8>>,
) -> Result<(), String> {
    let target = &directive.target_file;
    let old = String::from_utf8(before.get(target).cloned().unwrap_or_default()).unwrap();
    let new = String::from_utf8(after.get(target).cloned().ok_or("target vanished")?).unwrap();
    let old_lines: Vec<&str> = old.lines().collect();
    let new_lines: Vec<&str> = new.lines().collect();
    match &directive.action {
        Action::RewriteImport { old_target, new_target, lines } => {
            ensure(old_lines.len() == new_lines.len(), || "line count changed".into())?;
            for (i, (a, b)) in old_lines.iter().zip(&new_lines).enumerate() {
                let recorded = lines.contains(&(i as u32 + 1));
                if a != b && !recorded {
                    return Err(format!("unrecorded line {} changed", i + 1));
                }
                if recorded && (a == b || !a.contains(old_target.as_str()) || !b.contains(new_target.as_str())) {
                    return Err(format!("recorded line {} not rewritten: {a:?} -> {b:?}", i + 1));
                }
            }
        }
        Action::AddDeclaration { package, .. } => {
            ensure(new_lines.len() == old_lines.len() + 1, || "expected exactly one added line".into())?;
            ensure(new_lines[..old_lines.len()] == old_lines[..], || "existing lines changed".into())?;
            let added = new_lines.last().unwrap();
            let name = added.split(|c: char| "<>=!~;[ ".contains(c)).next().unwrap();
            ensure(common::normalize(name) == *package, || format!("added line {added:?}"))?;
        }
        other => return Err(format!("unexpected {}", other.name())),
    }
    Ok(())
}

fn criterion_6(_: &mut Shared) -> Check {
    let templates: Vec<_> = template_names().into_iter().filter_map(template).collect();
    let config = LoopConfig::default();
    let wanted = [FaultKind::RemoveDeclaration, FaultKind::BreakInternalImport, FaultKind::RenameInternalModule];
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut violations = Vec::new();
    let mut seed = 6000u64;
    while counts.values().sum::<usize>() < 100 && seed < 8000 {
        seed += 1;
        let Some((_, kind, m)) = draw_case(seed, &templates) else { continue };
        if !wanted.contains(&kind) {
            continue;
        }
        let dir = tempfile::tempdir().unwrap();
        write_tree(dir.path(), &m.files).unwrap();
        let Ok(d) = diagnose(dir.path(), &config) else { continue };
        let plan = plan_revision(&d.verdict, &d.env, &d.evidence);
        let before = read_tree(dir.path());
        let first = apply_mechanical(&plan, dir.path());
        let once = read_tree(dir.path());
        let second = apply_mechanical(&plan, dir.path());
        let twice = read_tree(dir.path());
        let applied: Vec<_> = first
            .applied
            .iter()
            .filter(|d| matches!(d.action, Action::RewriteImport { .. } | Action::AddDeclaration { .. }))
            .collect();
        if applied.is_empty() {
            continue;
        }
        if once != twice || !second.applied.is_empty() {
            violations.push(format!("seed {seed}: second application changed the tree"));
        }
        let targets: BTreeSet<&str> = first.applied.iter().map(|d| d.target_file.as_str()).collect();
        for (path, bytes) in &once {
            if before.get(path) != Some(bytes) && !targets.contains(path.as_str()) {
                violations.push(format!("seed {seed}: untargeted file {path} changed"));
            }
        }
        for d in applied {
            if let Err(e) = check_application(d, &before, &once) {
                violations.push(format!("seed {seed} {}: {e}", d.action.name()));
            }
            *counts.entry(d.action.name()).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    ensure(total >= 100, || format!("only {total} applications found"))?;
    ensure(violations.is_empty(), || violations.join("\n    "))?;
    Ok(format!("{total} applications {counts:?}, zero violations"))
}

fn criterion_7(_: &mut Shared) -> Check {
    let graphs = |root: &Path| {
        let env = build_env(root, &ScanConfig::default(), &PackageKnowledge::bundled()).unwrap();
        (env.g_ext.to_json(), env.g_int.to_json())
    };
    ensure(graphs(&common::client_fixture()) == graphs(&common::client_fixture()), || "fixture graph JSON differs".into())?;
    let mut rng_a = ChaCha8Rng::seed_from_u64(77);
    let mut rng_b = ChaCha8Rng::seed_from_u64(77);
    for i in 0..20 {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        gen_repo(&mut rng_a, 20, true).write(a.path());
        gen_repo(&mut rng_b, 20, true).write(b.path());
        ensure(graphs(a.path()) == graphs(b.path()), || format!("random repo {i} graph JSON differs"))?;
    }

    let names = template_names();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        generate_corpus(d.path(), 12, 11, &names, &ExecConfig::default()).map_err(|e| e.to_string())?;
    }
    ensure(read_tree(a.path()) == read_tree(b.path()), || "corpus trees differ".into())?;
    let eval = |d: &Path| evaluate_attribution(d, &LoopConfig::default()).unwrap().to_json();
    ensure(eval(a.path()) == eval(b.path()), || "accuracy reports differ".into())?;

    let run = || {
        let dir = tempfile::tempdir().unwrap();
        copy_tree(&common::client_fixture(), dir.path());
        let report = align_with(dir.path(), &launch_only(), None).to_json();
        (report, read_tree(dir.path()))
    };
    ensure(run() == run(), || "client run reports or final trees differ".into())?;
    Ok("graph JSON, corpus trees, accuracy and run reports are byte-identical across runs".into())
}

fn main() {
    let criteria: [(&str, fn(&mut Shared) -> Check); 7] = [
        ("motivating example trace", criterion_1),
        ("graph oracle equivalence", criterion_2),
        ("attribution accuracy on the corpus", criterion_3),
        ("priority ordering", criterion_4),
        ("loop contract", criterion_5),
        ("mechanical repair minimality and idempotence", criterion_6),
        ("determinism", criterion_7),
    ];
    let mut shared = Shared { corpus: None };
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| check(&mut shared)))
            .unwrap_or_else(|p| {
                Err(p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()))
            });
        match result {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
