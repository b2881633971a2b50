//! Single-edit fault injection on an in-memory repository.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::attribution::Source;
use crate::manifest::parse_requirement;

pub type Files = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    RemoveDeclaration,
    RenameInternalModule,
    BreakInternalImport,
    DeleteSymbol,
    InjectSyntaxError,
    InjectLogicFault,
}

impl FaultKind {
    pub const ALL: [FaultKind; 6] = [
        FaultKind::RemoveDeclaration,
        FaultKind::RenameInternalModule,
        FaultKind::BreakInternalImport,
        FaultKind::DeleteSymbol,
        FaultKind::InjectSyntaxError,
        FaultKind::InjectLogicFault,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::RemoveDeclaration => "remove-declaration",
            FaultKind::RenameInternalModule => "rename-internal-module",
            FaultKind::BreakInternalImport => "break-internal-import",
            FaultKind::DeleteSymbol => "delete-symbol",
            FaultKind::InjectSyntaxError => "inject-syntax-error",
            FaultKind::InjectLogicFault => "inject-logic-fault",
        }
    }

    pub fn ground_truth(self) -> Source {
        match self {
            FaultKind::RemoveDeclaration => Source::ExternalDependency,
            FaultKind::InjectLogicFault => Source::ResidualLogic,
            _ => Source::InternalReference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutation {
    pub files: Files,
    /// Human-readable edit site, e.g. `inventory/pricing.py:5`.
    pub target: String,
}

fn is_python(path: &str) -> bool {
    path.ends_with(".py")
}

fn is_test(path: &str) -> bool {
    path.starts_with("tests/") || path.rsplit('/').next().is_some_and(|n| n.starts_with("test_"))
}

fn is_initializer(path: &str) -> bool {
    path == "__init__.py" || path.ends_with("/__init__.py")
}

fn module_of(path: &str) -> String {
    let stem = path.trim_end_matches(".py");
    let stem = stem.strip_suffix("/__init__").unwrap_or(stem);
    stem.replace('/', ".")
}

fn modules(files: &Files) -> BTreeSet<String> {
    files.keys().filter(|p| is_python(p)).map(|p| module_of(p)).collect()
}

fn lines(text: &str) -> Vec<&str> {
    text.split_inclusive('\n').collect()
}

fn replace_line(text: &str, index: usize, new_line: &str) -> String {
    let mut parts: Vec<String> = lines(text).into_iter().map(str::to_string).collect();
    parts[index] = new_line.to_string();
    parts.concat()
}

fn with_file(files: &Files, path: &str, text: String) -> Files {
    let mut out = files.clone();
    out.insert(path.to_string(), text);
    out
}

fn pick<T: Clone, R: Rng>(items: &[T], rng: &mut R) -> Option<T> {
    items.choose(rng).cloned()
}

fn remove_declaration<R: Rng>(files: &Files, rng: &mut R) -> Option<Mutation> {
    let text = files.get("requirements.txt")?;
    let candidates: Vec<(usize, String)> = lines(text)
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with('-') {
                return None;
            }
            parse_requirement(t).map(|(name, _)| (i, name))
        })
        .collect();
    let (index, package) = pick(&candidates, rng)?;
    Some(Mutation {
        files: with_file(files, "requirements.txt", replace_line(text, index, "")),
        target: package,
    })
}

fn rename_internal_module<R: Rng>(files: &Files, rng: &mut R) -> Option<Mutation> {
    let existing = modules(files);
    let candidates: Vec<&String> = files
        .keys()
        .filter(|p| is_python(p) && !is_test(p) && !is_initializer(p) && p.as_str() != "main.py")
        .collect();
    let path = pick(&candidates, rng)?;
    let (dir, name) = path.rsplit_once('/').map(|(d, n)| (format!("{d}/"), n)).unwrap_or_default();
    let stem = name.trim_end_matches(".py");
    let variants = [format!("{stem}_impl"), format!("old_{stem}"), format!("{stem}s"), format!("{stem}2")];
    let fresh: Vec<&String> = variants
        .iter()
        .filter(|v| !existing.contains(&module_of(&format!("{dir}{v}.py"))))
        .collect();
    let new_path = format!("{dir}{}.py", pick(&fresh, rng)?);
    let mut out = files.clone();
    let text = out.remove(path.as_str())?;
    out.insert(new_path.clone(), text);
    Some(Mutation {
        files: out,
        target: format!("{path} -> {new_path}"),
    })
}

fn import_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\s*(?:from|import)\s+)([A-Za-z_][\w.]*)").expect("static regex"))
}

const FOREIGN_PREFIXES: &[&str] = &["app", "core", "pkg", "project"];

fn break_internal_import<R: Rng>(files: &Files, rng: &mut R) -> Option<Mutation> {
    let existing = modules(files);
    let tops: BTreeSet<&str> = existing.iter().filter_map(|m| m.split('.').next()).collect();
    let mut candidates = Vec::new();
    for (path, text) in files.iter().filter(|(p, _)| is_python(p)) {
        for (i, line) in lines(text).iter().enumerate() {
            let Some(c) = import_re().captures(line) else { continue };
            let target = &c[2];
            let segments: Vec<&str> = target.split('.').collect();
            if segments.len() >= 2 && existing.contains(target) {
                candidates.push((path.clone(), i, c.get(2).map(|m| m.range()).unwrap(), target.to_string()));
            }
        }
    }
    let (path, index, range, target) = pick(&candidates, rng)?;
    let (head, last) = target.rsplit_once('.').expect("dotted target");
    let first = target.split('.').next().unwrap_or("");
    let mut variants: Vec<String> = FOREIGN_PREFIXES
        .iter()
        .filter(|p| !tops.contains(*p))
        .map(|p| format!("{p}{}", &target[first.len()..]))
        .collect();
    variants.push(format!("{head}.{last}s"));
    if last.len() > 3 {
        variants.push(format!("{head}.{}", &last[..last.len() - 1]));
    }
    variants.retain(|v| !existing.contains(v));
    let broken = pick(&variants, rng)?;
    let text = &files[&path];
    let line = lines(text)[index];
    let new_line = format!("{}{}{}", &line[..range.start], broken, &line[range.end..]);
    Some(Mutation {
        files: with_file(files, &path, replace_line(text, index, &new_line)),
        target: format!("{path}:{} {target} -> {broken}", index + 1),
    })
}

fn from_import_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^from\s+([A-Za-z_][\w.]*)\s+import\s+([^#(]+)").expect("static regex"))
}

fn def_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:def|class)\s+([A-Za-z_]\w*)").expect("static regex"))
}

/// Line range `[start, end)` of the top-level definition of `name`.
fn definition_block(text: &str, name: &str) -> Option<(usize, usize)> {
    let ls = lines(text);
    let starts: Vec<usize> = ls
        .iter()
        .enumerate()
        .filter(|(_, l)| def_re().captures(l).is_some_and(|c| &c[1] == name))
        .map(|(i, _)| i)
        .collect();
    let [start] = starts[..] else { return None };
    let end = (start + 1..ls.len())
        .find(|&i| {
            let l = ls[i];
            !l.trim().is_empty() && !l.starts_with(' ') && !l.starts_with('\t') && !l.starts_with('#')
        })
        .unwrap_or(ls.len());
    Some((start, end))
}

fn delete_symbol<R: Rng>(files: &Files, rng: &mut R) -> Option<Mutation> {
    let by_module: BTreeMap<String, &String> = files
        .keys()
        .filter(|p| is_python(p))
        .map(|p| (module_of(p), p))
        .collect();
    let mut candidates = BTreeSet::new();
    for (path, text) in files.iter().filter(|(p, _)| is_python(p) && !is_test(p)) {
        for line in lines(text) {
            let Some(c) = from_import_re().captures(line) else { continue };
            let Some(&target_file) = by_module.get(&c[1]) else { continue };
            if target_file == path {
                continue;
            }
            for name in c[2].split(',') {
                let name = name.split_whitespace().next().unwrap_or("");
                if definition_block(&files[target_file], name).is_some() {
                    candidates.insert((target_file.clone(), c[1].to_string(), name.to_string()));
                }
            }
        }
    }
    let candidates: Vec<_> = candidates.into_iter().collect();
    let (path, module, name) = pick(&candidates, rng)?;
    let text = &files[&path];
    let (start, end) = definition_block(text, &name)?;
    let kept: String = lines(text)
        .iter()
        .enumerate()
        .filter(|(i, _)| !(start..end).contains(i))
        .map(|(_, l)| *l)
        .collect();
    Some(Mutation {
        files: with_file(files, &path, kept),
        target: format!("{module}.{name}"),
    })
}

fn inject_syntax_error<R: Rng>(files: &Files, rng: &mut R) -> Option<Mutation> {
    let mut candidates = Vec::new();
    for (path, text) in files.iter().filter(|(p, _)| is_python(p) && !is_test(p)) {
        for (i, line) in lines(text).iter().enumerate() {
            let t = line.trim();
            if (t.starts_with("def ") || t.starts_with("class ")) && t.ends_with(':') {
                candidates.push((path.clone(), i));
            }
        }
    }
    let (path, index) = pick(&candidates, rng)?;
    let text = &files[&path];
    let line = lines(text)[index];
    let colon = line.rfind(':').expect("candidate ends with a colon");
    let new_line = format!("{}{}", &line[..colon], &line[colon + 1..]);
    Some(Mutation {
        files: with_file(files, &path, replace_line(text, index, &new_line)),
        target: format!("{path}:{}", index + 1),
    })
}

fn comparison_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s(==|!=|<=|>=|<|>)\s").expect("static regex"))
}

fn flipped(op: &str) -> &'static str {
    match op {
        "==" => "!=",
        "!=" => "==",
        "<=" => "<",
        "<" => "<=",
        ">=" => ">",
        _ => ">=",
    }
}

/// Byte ranges of standalone integer literals.
fn integer_literals(line: &str) -> Vec<(usize, usize)> {
    let b = line.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i].is_ascii_digit() {
            let start = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            let before_ok = start == 0 || !(b[start - 1].is_ascii_alphanumeric() || b[start - 1] == b'_' || b[start - 1] == b'.');
            let after_ok = i >= b.len() || !(b[i].is_ascii_alphanumeric() || b[i] == b'_' || b[i] == b'.');
            if before_ok && after_ok {
                out.push((start, i));
            }
        } else {
            i += 1;
        }
    }
    out
}

fn inject_logic_fault<R: Rng>(files: &Files, rng: &mut R) -> Option<Mutation> {
    let mut candidates: Vec<(String, usize, (usize, usize), String)> = Vec::new();
    for (path, text) in files
        .iter()
        .filter(|(p, _)| is_python(p) && !is_test(p) && !is_initializer(p) && p.as_str() != "main.py")
    {
        for (i, line) in lines(text).iter().enumerate() {
            let t = line.trim_start();
            let skip = !line.starts_with(' ')
                || line.contains('"')
                || line.contains('\'')
                || ["def ", "class ", "import ", "from ", "#"].iter().any(|k| t.starts_with(k));
            if skip {
                continue;
            }
            for c in comparison_re().captures_iter(line) {
                let m = c.get(1).unwrap();
                candidates.push((path.clone(), i, (m.start(), m.end()), flipped(m.as_str()).to_string()));
            }
            for (s, e) in integer_literals(line) {
                let n: u64 = line[s..e].parse().ok()?;
                candidates.push((path.clone(), i, (s, e), (n + 1).to_string()));
            }
        }
    }
    let (path, index, (s, e), replacement) = pick(&candidates, rng)?;
    let text = &files[&path];
    let line = lines(text)[index];
    let new_line = format!("{}{}{}", &line[..s], replacement, &line[e..]);
    Some(Mutation {
        files: with_file(files, &path, replace_line(text, index, &new_line)),
        target: format!("{path}:{} {} -> {}", index + 1, &line[s..e], replacement),
    })
}

/// Apply one fault of `kind`. `None` when the repository offers no site for it.
pub fn mutate<R: Rng>(files: &Files, kind: FaultKind, rng: &mut R) -> Option<Mutation> {
    match kind {
        FaultKind::RemoveDeclaration => remove_declaration(files, rng),
        FaultKind::RenameInternalModule => rename_internal_module(files, rng),
        FaultKind::BreakInternalImport => break_internal_import(files, rng),
        FaultKind::DeleteSymbol => delete_symbol(files, rng),
        FaultKind::InjectSyntaxError => inject_syntax_error(files, rng),
        FaultKind::InjectLogicFault => inject_logic_fault(files, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::templates::TEMPLATES;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn files(i: usize) -> Files {
        TEMPLATES[i].files.iter().map(|(p, t)| (p.to_string(), t.to_string())).collect()
    }

    /// Changed region as (path, removed lines, added lines); renames count as one site.
    fn edit_sites(a: &Files, b: &Files) -> usize {
        let renamed = a.keys().filter(|k| !b.contains_key(*k)).count();
        if renamed > 0 {
            return renamed;
        }
        a.iter().filter(|(k, v)| b.get(*k) != Some(v)).count()
    }

    #[test]
    fn every_kind_applies_to_every_template() {
        for t in 0..TEMPLATES.len() {
            for kind in FaultKind::ALL {
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                let m = mutate(&files(t), kind, &mut rng).unwrap_or_else(|| panic!("{kind:?} on {}", TEMPLATES[t].name));
                assert_ne!(m.files, files(t));
                assert_eq!(edit_sites(&files(t), &m.files), 1);
            }
        }
    }

    #[test]
    fn delete_symbol_removes_one_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = delete_symbol(&files(0), &mut rng).unwrap();
        let (module, name) = m.target.rsplit_once('.').unwrap();
        let path = format!("{}.py", module.replace('.', "/"));
        assert!(definition_block(&m.files[&path], name).is_none());
    }

    #[test]
    fn logic_fault_keeps_imports() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = inject_logic_fault(&files(2), &mut rng).unwrap();
            for (p, t) in &m.files {
                let before: Vec<_> = files(2)[p].lines().filter(|l| import_re().is_match(l)).map(str::to_string).collect();
                let after: Vec<_> = t.lines().filter(|l| import_re().is_match(l)).map(str::to_string).collect();
                assert_eq!(before, after);
            }
        }
    }

    #[test]
    fn literals() {
        assert_eq!(integer_literals("    return x * 9 / 5 + 32"), [(15, 16), (19, 20), (23, 25)]);
        assert!(integer_literals("    a = b2 + 1.5").is_empty());
    }
}
