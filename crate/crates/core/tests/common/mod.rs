//! Random Python repositories with a structured description of what each
//! file imports, plus brute-force oracles computed from that description
//! without going through the library's parser or resolver.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

pub const PACKAGES: &[&str] = &["alpha", "beta", "gamma", "delta", "omega"];
pub const MODULES: &[&str] = &["models", "views", "helpers", "service", "loader", "widgets", "store", "codec"];
pub const EXTERNAL: &[&str] = &["requests", "flask", "click", "tabulate", "colorama", "numpy", "pandas", "jinja2"];
pub const STDLIB: &[&str] = &["os", "sys", "json", "re", "math", "collections", "itertools", "functools"];
pub const MISNAMED_HEADS: &[&str] = &["app", "lib", "project"];

#[derive(Debug, Clone)]
pub struct GenImport {
    pub target: String,
    pub level: u32,
    pub symbols: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GenFile {
    pub path: String,
    pub imports: Vec<GenImport>,
    pub defs: Vec<String>,
    pub broken: bool,
}

#[derive(Debug, Clone)]
pub struct GenRepo {
    pub files: Vec<GenFile>,
    /// Requirement lines as written.
    pub requirements: Vec<String>,
}

pub fn client_fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/client")
}

pub fn module_of(path: &str) -> String {
    let stem = path.strip_suffix(".py").unwrap();
    let stem = stem.strip_suffix("/__init__").unwrap_or(stem);
    stem.replace('/', ".")
}

fn is_init(path: &str) -> bool {
    path.ends_with("__init__.py")
}

fn render_import(i: &GenImport) -> String {
    let dots = ".".repeat(i.level as usize);
    if i.symbols.is_empty() {
        format!("import {}\n", i.target)
    } else {
        format!("from {dots}{} import {}\n", i.target, i.symbols.join(", "))
    }
}

impl GenFile {
    pub fn render(&self) -> String {
        let mut out: String = self.imports.iter().map(render_import).collect();
        out.push_str("\n\n");
        for d in &self.defs {
            if d.starts_with(char::is_uppercase) {
                out.push_str(&format!("class {d}:\n    pass\n\n\n"));
            } else {
                out.push_str(&format!("def {d}():\n    return 1\n\n\n"));
            }
        }
        if self.broken {
            out.push_str("def broken()\n    return 2\n");
        }
        out
    }
}

impl GenRepo {
    pub fn write(&self, root: &Path) {
        for f in &self.files {
            let p = root.join(&f.path);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, f.render()).unwrap();
        }
        if !self.requirements.is_empty() {
            let text: String = self.requirements.iter().map(|l| format!("{l}\n")).collect();
            std::fs::write(root.join("requirements.txt"), text).unwrap();
        }
    }

    pub fn file_paths(&self) -> Vec<String> {
        let mut v: Vec<String> = self.files.iter().map(|f| f.path.clone()).collect();
        if !self.requirements.is_empty() {
            v.push("requirements.txt".into());
        }
        v.sort();
        v
    }

    pub fn parsed_files(&self) -> impl Iterator<Item = &GenFile> {
        self.files.iter().filter(|f| !f.broken)
    }
}

/// A repository of at most `max_files` files. With `allow_broken`, some
/// files end in a definition missing its colon.
pub fn gen_repo<R: Rng>(rng: &mut R, max_files: usize, allow_broken: bool) -> GenRepo {
    let mut paths: Vec<String> = vec!["main.py".into()];
    let n_pkg = rng.gen_range(1..=3);
    let pkgs: Vec<&str> = PACKAGES.choose_multiple(rng, n_pkg).copied().collect();
    for pkg in &pkgs {
        paths.push(format!("{pkg}/__init__.py"));
        let n = rng.gen_range(1..=4);
        for m in MODULES.choose_multiple(rng, n) {
            paths.push(format!("{pkg}/{m}.py"));
        }
        if rng.gen_bool(0.3) {
            paths.push(format!("{pkg}/sub/__init__.py"));
            let n = rng.gen_range(1..=2);
            for m in MODULES.choose_multiple(rng, n) {
                paths.push(format!("{pkg}/sub/{m}.py"));
            }
        }
    }
    paths.truncate(max_files - 1);

    let defs: BTreeMap<String, Vec<String>> = paths
        .iter()
        .map(|p| {
            let n = rng.gen_range(0..=3);
            let names = (0..n)
                .map(|i| if rng.gen_bool(0.3) { format!("Thing{i}") } else { format!("func_{i}") })
                .collect();
            (p.clone(), names)
        })
        .collect();
    let modules: Vec<String> = paths.iter().filter(|p| *p != "main.py").map(|p| module_of(p)).collect();

    let mut files = Vec::new();
    for path in &paths {
        let in_package = path.contains('/');
        let mut imports = Vec::new();
        for _ in 0..rng.gen_range(0..=5) {
            imports.push(gen_import(rng, in_package, &modules, &defs));
        }
        files.push(GenFile {
            path: path.clone(),
            imports,
            defs: defs[path].clone(),
            broken: allow_broken && path != "main.py" && rng.gen_bool(0.1),
        });
    }

    let mut requirements = Vec::new();
    let n = rng.gen_range(0..=4);
    let declared: Vec<&str> = EXTERNAL.choose_multiple(rng, n).copied().collect();
    for name in declared {
        let spelled = match rng.gen_range(0..3) {
            0 => name.to_string(),
            1 => name.to_uppercase(),
            _ => format!("{name}>=1.0"),
        };
        requirements.push(spelled);
    }
    GenRepo { files, requirements }
}

fn gen_import<R: Rng>(
    rng: &mut R,
    in_package: bool,
    modules: &[String],
    defs: &BTreeMap<String, Vec<String>>,
) -> GenImport {
    let plain = |t: String| GenImport { target: t, level: 0, symbols: vec![] };
    let from = |t: String, level: u32, s: &str| GenImport { target: t, level, symbols: vec![s.to_string()] };
    let existing = modules.choose(rng).cloned();
    match rng.gen_range(0..9) {
        0 => plain(STDLIB.choose(rng).unwrap().to_string()),
        1 => from("collections".into(), 0, "OrderedDict"),
        2 => {
            let e = EXTERNAL.choose(rng).unwrap();
            if rng.gen_bool(0.5) { plain(e.to_string()) } else { plain(format!("{e}.sub")) }
        }
        3 => from(EXTERNAL.choose(rng).unwrap().to_string(), 0, "Thing"),
        4 => match existing {
            Some(m) => {
                let file = defs.keys().find(|p| module_of(p) == m).unwrap();
                match defs[file].choose(rng) {
                    Some(d) if rng.gen_bool(0.5) => from(m, 0, d),
                    _ => plain(m),
                }
            }
            None => plain("os".into()),
        },
        5 => match existing {
            Some(m) => plain(format!("{m}.{}", ["missing", "nosuch"].choose(rng).unwrap())),
            None => plain("sys".into()),
        },
        6 if in_package => {
            let target = if rng.gen_bool(0.5) {
                MODULES.choose(rng).unwrap().to_string()
            } else {
                String::new()
            };
            if target.is_empty() {
                from(target, 1, MODULES.choose(rng).unwrap())
            } else {
                from(target, 1, "func_0")
            }
        }
        7 if in_package => from(MODULES.choose(rng).unwrap().to_string(), rng.gen_range(2..=3), "x"),
        _ => match existing {
            Some(m) => {
                let last = m.rsplit('.').next().unwrap();
                from(format!("{}.{last}", MISNAMED_HEADS.choose(rng).unwrap()), 0, "func_0")
            }
            None => plain("json".into()),
        },
    }
}

pub fn normalize(name: &str) -> String {
    let mut out = String::new();
    let mut sep = false;
    for c in name.chars() {
        if "-_.".contains(c) {
            if !sep {
                out.push('-');
            }
            sep = true;
        } else {
            out.extend(c.to_lowercase());
            sep = false;
        }
    }
    out
}

fn head(s: &str) -> &str {
    s.split('.').next().unwrap()
}

fn suffix_at_least_half(target: &str, module: &str) -> bool {
    let t: Vec<&str> = target.split('.').collect();
    let m: Vec<&str> = module.split('.').collect();
    let mut shared = 0;
    while shared < t.len() && shared < m.len() && t[t.len() - 1 - shared] == m[m.len() - 1 - shared] {
        shared += 1;
    }
    2 * shared >= t.len()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Class {
    Internal,
    Stdlib(String),
    External(String),
}

pub struct Oracle {
    /// Every module named by a source file, including unparsable ones.
    pub internal: BTreeSet<String>,
    /// Modules of files that parsed.
    pub defined: BTreeSet<String>,
}

impl Oracle {
    pub fn new(repo: &GenRepo) -> Self {
        Oracle {
            internal: repo.files.iter().map(|f| module_of(&f.path)).collect(),
            defined: repo.parsed_files().map(|f| module_of(&f.path)).collect(),
        }
    }

    pub fn classify(&self, imp: &GenImport) -> Class {
        if imp.level > 0 {
            return Class::Internal;
        }
        let h = head(&imp.target);
        if self.internal.iter().any(|m| head(m) == h) {
            return Class::Internal;
        }
        if STDLIB.contains(&h) {
            return Class::Stdlib(h.to_string());
        }
        if self.internal.iter().any(|m| suffix_at_least_half(&imp.target, m)) {
            return Class::Internal;
        }
        Class::External(h.to_string())
    }

    /// Absolute target, or the dotted spelling when it climbs past the root.
    pub fn absolute(&self, imp: &GenImport, file: &str) -> Result<String, String> {
        if imp.level == 0 {
            return Ok(imp.target.clone());
        }
        let module = module_of(file);
        let mut parts: Vec<&str> = module.split('.').collect();
        if !is_init(file) {
            parts.pop();
        }
        let up = imp.level as usize - 1;
        if parts.len() <= up {
            return Err(format!("{}{}", ".".repeat(imp.level as usize), imp.target));
        }
        parts.truncate(parts.len() - up);
        let mut out = parts.join(".");
        if !imp.target.is_empty() {
            out = format!("{out}.{}", imp.target);
        }
        Ok(out)
    }

    fn resolvable(&self, target: &str) -> bool {
        self.defined.iter().any(|m| m == target || m.starts_with(&format!("{target}.")))
    }

    /// package -> (import names, using files), for used external packages
    /// that no requirement line declares.
    pub fn gaps(&self, repo: &GenRepo) -> BTreeMap<String, (BTreeSet<String>, BTreeSet<String>)> {
        let declared: BTreeSet<String> = repo
            .requirements
            .iter()
            .map(|l| normalize(l.split(|c: char| "<>=!~;[ ".contains(c)).next().unwrap()))
            .collect();
        let mut used: BTreeMap<String, (BTreeSet<String>, BTreeSet<String>)> = BTreeMap::new();
        let mut stdlib_used = BTreeSet::new();
        for f in repo.parsed_files() {
            for imp in &f.imports {
                match self.classify(imp) {
                    Class::External(h) => {
                        let e = used.entry(normalize(&h)).or_default();
                        e.0.insert(h);
                        e.1.insert(f.path.clone());
                    }
                    Class::Stdlib(h) => {
                        stdlib_used.insert(h);
                    }
                    Class::Internal => {}
                }
            }
        }
        used.retain(|p, _| !declared.contains(p) && !stdlib_used.contains(p));
        used
    }

    /// target -> (importing modules, site files)
    pub fn unresolved(&self, repo: &GenRepo) -> BTreeMap<String, (BTreeSet<String>, BTreeSet<String>)> {
        let mut out: BTreeMap<String, (BTreeSet<String>, BTreeSet<String>)> = BTreeMap::new();
        for f in repo.parsed_files() {
            let module = module_of(&f.path);
            for imp in &f.imports {
                if self.classify(imp) != Class::Internal {
                    continue;
                }
                let target = match self.absolute(imp, &f.path) {
                    Ok(t) if self.resolvable(&t) => continue,
                    Ok(t) | Err(t) => t,
                };
                let e = out.entry(target).or_default();
                e.0.insert(module.clone());
                e.1.insert(f.path.clone());
            }
        }
        out
    }

    pub fn parse_errors(&self, repo: &GenRepo) -> BTreeSet<String> {
        repo.files.iter().filter(|f| f.broken).map(|f| f.path.clone()).collect()
    }
}

pub fn copy_tree(src: &Path, dst: &Path) {
    for entry in walkdir::WalkDir::new(src) {
        let entry = entry.unwrap();
        let rel = entry.path().strip_prefix(src).unwrap();
        let target = dst.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target).unwrap();
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
}

/// Relative path to contents for every file under `root`.
pub fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .map(Result::unwrap)
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            (rel, std::fs::read(e.path()).unwrap())
        })
        .collect()
}
