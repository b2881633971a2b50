mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use envalign::attribution::{attribute, Source};
use envalign::corpus::{draw_case, template_files, FaultKind, TEMPLATES};
use envalign::env::{build_env, BuiltEnv};
use envalign::evidence::{
    validate_record, Confidence, EvidenceKind, EvidenceRecord, Normalizer, OriginHint, RuleNormalizer,
};
use envalign::exec::{Phase, RawExecutionLog};
use envalign::ext_graph::{find_dependency_gaps, GapKind, ImportClass};
use envalign::int_graph::{find_unresolved_refs, IntEdgeKind};
use envalign::knowledge::PackageKnowledge;
use envalign::parser::extract_imports;
use envalign::scan::{scan_repository, ScanConfig};

use common::{gen_repo, module_of, GenRepo, Oracle};

fn repo(seed: u64) -> GenRepo {
    gen_repo(&mut ChaCha8Rng::seed_from_u64(seed), 20, true)
}

fn build(repo: &GenRepo) -> (tempfile::TempDir, BuiltEnv) {
    let dir = tempfile::tempdir().unwrap();
    repo.write(dir.path());
    let env = build_env(dir.path(), &ScanConfig::default(), &PackageKnowledge::bundled()).unwrap();
    (dir, env)
}

fn used_not_declared(env: &BuiltEnv) -> BTreeSet<String> {
    find_dependency_gaps(&env.g_ext)
        .into_iter()
        .filter(|g| g.kind == GapKind::UsedNotDeclared)
        .map(|g| g.package)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn scan_is_idempotent_and_complete(seed in any::<u64>()) {
        let r = repo(seed);
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path());
        let a = scan_repository(dir.path(), &ScanConfig::default()).unwrap();
        let b = scan_repository(dir.path(), &ScanConfig::default()).unwrap();
        prop_assert_eq!(&a.digest, &b.digest);
        let paths: Vec<String> = a.files.iter().map(|f| f.rel_path.clone()).collect();
        prop_assert_eq!(paths, r.file_paths());
        for f in &a.files {
            prop_assert!(dir.path().join(&f.rel_path).starts_with(dir.path()));
        }
    }

    #[test]
    fn graphs_rebuild_identically(seed in any::<u64>()) {
        let r = repo(seed);
        let (dir, env) = build(&r);
        let again = build_env(dir.path(), &ScanConfig::default(), &PackageKnowledge::bundled()).unwrap();
        prop_assert_eq!(env.g_ext.to_json(), again.g_ext.to_json());
        prop_assert_eq!(env.g_int.to_json(), again.g_int.to_json());
    }

    #[test]
    fn int_graph_structure(seed in any::<u64>()) {
        let r = repo(seed);
        let (_dir, env) = build(&r);
        let g = &env.g_int;
        prop_assert!(g.validate().is_ok());
        let ids: BTreeSet<&str> = g.nodes.iter().map(|n| n.id.as_str()).collect();
        for e in &g.edges {
            prop_assert!(ids.contains(e.src.as_str()) && ids.contains(e.dst.as_str()), "dangling {:?}", e);
        }
        for f in r.files.iter().filter(|f| f.broken) {
            let file_id = format!("file:{}", f.path);
            let pe = g.edges.iter().filter(|e| e.kind == IntEdgeKind::HasParseError && e.src == file_id).count();
            prop_assert_eq!(pe, 1);
            let defines = g.edges.iter().any(|e| e.kind == IntEdgeKind::DefinesModule && e.src == file_id);
            prop_assert!(!defines);
        }
    }

    #[test]
    fn declaring_a_package_removes_only_its_gap(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let mut r = repo(seed);
        let (_d, before) = build(&r);
        let gaps = used_not_declared(&before);
        let candidates: Vec<String> = gaps.iter().cloned().chain(common::EXTERNAL.iter().map(|s| s.to_string())).collect();
        let p = pick.get(&candidates).clone();
        r.requirements.push(p.clone());
        let (_d2, after) = build(&r);
        let mut expected = gaps.clone();
        expected.remove(&p);
        prop_assert_eq!(used_not_declared(&after), expected);
    }

    #[test]
    fn rewriting_to_suggested_matches_resolves_them(seed in any::<u64>()) {
        let mut r = repo(seed);
        let (_d, env) = build(&r);
        let suggestions: BTreeMap<String, String> = find_unresolved_refs(&env.g_int)
            .into_iter()
            .filter_map(|u| u.best_match.map(|m| (u.target, m.module)))
            .collect();
        let oracle = Oracle::new(&r);
        for f in r.files.iter_mut() {
            let path = f.path.clone();
            for imp in f.imports.iter_mut() {
                let (Ok(key) | Err(key)) = oracle.absolute(imp, &path);
                let Some(new) = suggestions.get(&key) else { continue };
                if oracle.classify(imp) == common::Class::Internal {
                    imp.target = new.clone();
                    imp.level = 0;
                }
            }
        }
        let (_d2, after) = build(&r);
        let remaining: BTreeSet<String> = find_unresolved_refs(&after.g_int).into_iter().map(|u| u.target).collect();
        for t in suggestions.keys() {
            prop_assert!(!remaining.contains(t), "{} still unresolved", t);
        }
    }

    #[test]
    fn import_extraction_is_pure_and_line_accurate(lines in prop::collection::vec(line_strategy(), 0..12)) {
        let text = lines.join("\n");
        let a = extract_imports(&text, "pkg/mod.py");
        let b = extract_imports(&text, "pkg/mod.py");
        prop_assert_eq!(&a, &b);
        if let Ok(records) = a {
            let src: Vec<&str> = text.lines().collect();
            for rec in records {
                let line = src[rec.line as usize - 1];
                prop_assert!(line.split(|c: char| !c.is_alphanumeric() && c != '_').any(|w| w == "import" || w == "from"), "{:?}", line);
            }
        }
    }

    #[test]
    fn normalizer_output_is_schema_clean(fragments in prop::collection::vec(log_fragment(), 0..10), exit in prop::option::of(0i32..3), phase in 0usize..3) {
        let fixture = common::client_fixture();
        let knowledge = PackageKnowledge::bundled();
        let env = build_env(&fixture, &ScanConfig::default(), &knowledge).unwrap();
        let stderr = fragments.concat();
        let log = RawExecutionLog {
            phase: [Phase::Install, Phase::Launch, Phase::Test][phase],
            command: vec!["python3".into()],
            exit_code: exit,
            timed_out: exit.is_none(),
            stdout: String::new(),
            stderr,
            stdout_truncated: false,
            stderr_truncated: false,
            duration_ms: None,
        };
        let logs = [log];
        let out = RuleNormalizer::new(knowledge.clone()).normalize(&logs, &env.g_ext, &env.g_int);
        let resolver = env.resolver(&knowledge);
        for r in &out.records {
            prop_assert!(validate_record(r, &logs, &env.g_int, &knowledge).is_ok(), "{:?}", r);
            prop_assert!(logs[0].stderr.contains(&r.excerpt));
            if r.kind == EvidenceKind::MissingModule {
                let expected = match resolver.classify_name(r.subject.as_deref().unwrap()) {
                    ImportClass::Internal => OriginHint::Internal,
                    ImportClass::External(_) => OriginHint::External,
                    ImportClass::Stdlib => OriginHint::Unknown,
                };
                prop_assert_eq!(r.origin_hint, expected);
            }
        }
    }

    #[test]
    fn attribution_is_total_pure_and_pass_sound(seed in any::<u64>(), ev in prop::collection::vec((record_strategy(), prop::option::of(0usize..64)), 0..5)) {
        let r = repo(seed);
        let (_d, env) = build(&r);
        let files = r.file_paths();
        let ev: Vec<EvidenceRecord> = ev
            .into_iter()
            .map(|(mut e, file)| {
                e.file = file.map(|i| files[i % files.len()].clone());
                e
            })
            .collect();
        let a = attribute(&env.g_ext, &env.g_int, &ev).unwrap();
        let b = attribute(&env.g_ext, &env.g_int, &ev).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.source == Source::Pass, ev.is_empty());
        prop_assert_eq!(a.supporting_nodes.is_empty(), ev.is_empty());
        prop_assert!(a.supporting_evidence.iter().all(|&i| i < ev.len()));
    }

    #[test]
    fn mutants_have_one_edit_site_and_sound_labels(seed in any::<u64>()) {
        let templates: Vec<_> = TEMPLATES.iter().collect();
        if let Some((t, kind, m)) = draw_case(seed, &templates) {
            let base = template_files(t);
            let removed: Vec<_> = base.keys().filter(|k| !m.files.contains_key(*k)).collect();
            let added: Vec<_> = m.files.keys().filter(|k| !base.contains_key(*k)).collect();
            if kind == FaultKind::RenameInternalModule {
                prop_assert_eq!(removed.len(), 1);
                prop_assert_eq!(added.len(), 1);
                prop_assert_eq!(&base[removed[0]], &m.files[added[0]]);
                prop_assert!(base.iter().filter(|(k, _)| *k != removed[0]).all(|(k, v)| m.files.get(k) == Some(v)));
            } else {
                prop_assert!(removed.is_empty() && added.is_empty());
                let changed: Vec<_> = base.keys().filter(|k| base[*k] != m.files[*k]).collect();
                prop_assert_eq!(changed.len(), 1);
                prop_assert!(one_hunk(&base[changed[0]], &m.files[changed[0]]));
            }
            let label = match kind {
                FaultKind::RemoveDeclaration => Source::ExternalDependency,
                FaultKind::InjectLogicFault => Source::ResidualLogic,
                _ => Source::InternalReference,
            };
            prop_assert_eq!(kind.ground_truth(), label);
        }
    }
}

/// The texts differ by one replaced line or by one contiguous deletion.
fn one_hunk(a: &str, b: &str) -> bool {
    let (a, b): (Vec<&str>, Vec<&str>) = (a.lines().collect(), b.lines().collect());
    let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let suffix = a[prefix..].iter().rev().zip(b[prefix..].iter().rev()).take_while(|(x, y)| x == y).count();
    let (old, new) = (a.len() - prefix - suffix, b.len() - prefix - suffix);
    (old == 1 && new == 1) || (old > 0 && new == 0)
}

fn line_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("import os".to_string()),
        Just("import a.b as c, d".to_string()),
        Just("from . import x".to_string()),
        Just("from ..pkg.mod import (a,\n    b)".to_string()),
        Just("x = 'import y'".to_string()),
        Just("# import z".to_string()),
        Just("def f():\n    import json".to_string()),
        Just("s = \"\"\"\nimport fake\n\"\"\"".to_string()),
        Just("if True:\n    from q import r".to_string()),
        "[a-z ]{0,12}".prop_map(|s| s),
    ]
}

fn log_fragment() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("Traceback (most recent call last):\n".to_string()),
        Just("  File \"<workspace>/main.py\", line 2, in <module>\n".to_string()),
        Just("  File \"/usr/lib/python3.10/importlib/__init__.py\", line 126, in import_module\n".to_string()),
        Just("    from app.client import APIClient\n".to_string()),
        Just("ModuleNotFoundError: No module named 'requests'\n".to_string()),
        Just("ModuleNotFoundError: No module named 'app.client'\n".to_string()),
        Just("ModuleNotFoundError: No module named 'os'\n".to_string()),
        Just("ImportError: cannot import name 'APIClient' from 'src.client' (<workspace>/src/client.py)\n".to_string()),
        Just("  File \"<workspace>/src/client.py\", line 4\n    def f(\n         ^\nSyntaxError: invalid syntax\n".to_string()),
        Just("AssertionError: 1 != 2\n".to_string()),
        Just("ERROR: No matching distribution found for nosuchpkg\n".to_string()),
        Just("FAILED (failures=1)\n".to_string()),
        "[ -~]{0,40}\n".prop_map(|s| s),
    ]
}

fn record_strategy() -> impl Strategy<Value = EvidenceRecord> {
    let kinds = [
        EvidenceKind::DependencyInstallFailure,
        EvidenceKind::MissingModule,
        EvidenceKind::MissingSymbol,
        EvidenceKind::ParseFailure,
        EvidenceKind::TestAssertionFailure,
        EvidenceKind::RuntimeExceptionOther,
        EvidenceKind::Timeout,
        EvidenceKind::NonzeroExitOther,
    ];
    let subjects = ["requests", "numpy.sub", "alpha.models", "alpha.nosuch", "app.models", "beta", "zzz"];
    (
        prop::sample::select(kinds.to_vec()),
        prop::sample::select(vec![Phase::Install, Phase::Launch, Phase::Test]),
        prop::option::of(prop::sample::select(subjects.to_vec())),
        prop::sample::select(vec![OriginHint::External, OriginHint::Internal, OriginHint::Unknown]),
    )
        .prop_map(|(kind, phase, subject, origin_hint)| EvidenceRecord {
            phase,
            kind,
            subject: subject.map(str::to_string),
            origin_hint,
            file: None,
            line: None,
            frames: vec![],
            excerpt: String::new(),
            confidence: Confidence::Heuristic,
            occurrences: 1,
        })
}

#[test]
fn module_names_follow_paths() {
    assert_eq!(module_of("a/b/__init__.py"), "a.b");
    assert_eq!(module_of("a/b.py"), "a.b");
}
