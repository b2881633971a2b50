//! Dependency declarations read from repository manifests.
//!
//! Supported formats: requirement lists (`*.txt`), `pyproject.toml`
//! (`[project]` and Poetry tables), `setup.cfg` (`install_requires`), and a
//! literal `install_requires=[...]` list in `setup.py`.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::knowledge::normalize_package_name;
use crate::scan::RepoFile;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeclaredDependency {
    pub package: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version_constraint: Option<String>,
    pub manifest: String,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedManifestLine {
    pub manifest: String,
    pub line: u32,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManifestParse {
    pub declarations: Vec<DeclaredDependency>,
    pub malformed: Vec<MalformedManifestLine>,
}

fn requirement_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^([A-Za-z0-9](?:[A-Za-z0-9._-]*[A-Za-z0-9])?)\s*(\[[^\]]*\])?\s*(.*)$")
            .expect("static regex")
    })
}

/// Parse one requirement specifier such as `Flask[async]>=2.0; python_version>"3"`.
/// Returns the normalized name and the verbatim constraint text.
pub fn parse_requirement(spec: &str) -> Option<(String, Option<String>)> {
    let caps = requirement_re().captures(spec.trim())?;
    let rest = caps.get(3).map(|m| m.as_str().trim()).unwrap_or("");
    let valid_rest = rest.is_empty()
        || ["==", ">=", "<=", "!=", "~=", ">", "<", ";", "@", "("]
            .iter()
            .any(|p| rest.starts_with(p));
    if !valid_rest {
        return None;
    }
    let constraint = (!rest.is_empty()).then(|| rest.to_string());
    Some((normalize_package_name(&caps[1]), constraint))
}

pub fn parse_manifest(file: &RepoFile) -> ManifestParse {
    let Some(text) = file.text.as_deref() else {
        return ManifestParse::default();
    };
    let name = file.file_name();
    if name.ends_with(".txt") {
        parse_requirement_list(text, &file.rel_path)
    } else if name.ends_with(".toml") {
        parse_pyproject(text, &file.rel_path)
    } else if name == "setup.cfg" {
        parse_setup_cfg(text, &file.rel_path)
    } else if name == "setup.py" {
        parse_setup_py(text, &file.rel_path)
    } else {
        ManifestParse::default()
    }
}

/// Strip a trailing comment the way pip does: `#` at line start or after whitespace.
fn strip_comment(line: &str) -> &str {
    if line.trim_start().starts_with('#') {
        return "";
    }
    let bytes = line.as_bytes();
    for (i, b) in bytes.iter().enumerate() {
        if *b == b'#' && i > 0 && bytes[i - 1].is_ascii_whitespace() {
            return &line[..i];
        }
    }
    line
}

pub fn parse_requirement_list(text: &str, manifest: &str) -> ManifestParse {
    let mut out = ManifestParse::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx as u32 + 1;
        let line = strip_comment(raw).trim();
        // Options such as `-r other.txt` or `--index-url` are not declarations.
        if line.is_empty() || line.starts_with('-') {
            continue;
        }
        match parse_requirement(line) {
            Some((package, version_constraint)) => out.declarations.push(DeclaredDependency {
                package,
                version_constraint,
                manifest: manifest.to_string(),
                line: line_no,
            }),
            None => out.malformed.push(MalformedManifestLine {
                manifest: manifest.to_string(),
                line: line_no,
                text: raw.to_string(),
            }),
        }
    }
    out
}

/// 1-based line of the first occurrence of `needle` at or after byte `from`.
fn line_of(text: &str, needle: &str, from: usize) -> (u32, usize) {
    match text[from.min(text.len())..].find(needle) {
        Some(pos) => {
            let abs = from + pos;
            (text[..abs].matches('\n').count() as u32 + 1, abs + needle.len())
        }
        None => (0, from),
    }
}

fn push_spec(out: &mut ManifestParse, text: &str, manifest: &str, spec: &str, cursor: &mut usize) {
    let (line, next) = line_of(text, spec, *cursor);
    if line > 0 {
        *cursor = next;
    }
    match parse_requirement(spec) {
        Some((package, version_constraint)) => out.declarations.push(DeclaredDependency {
            package,
            version_constraint,
            manifest: manifest.to_string(),
            line: line.max(1),
        }),
        None => out.malformed.push(MalformedManifestLine {
            manifest: manifest.to_string(),
            line: line.max(1),
            text: spec.to_string(),
        }),
    }
}

fn parse_pyproject(text: &str, manifest: &str) -> ManifestParse {
    let mut out = ManifestParse::default();
    let doc: toml::Table = match toml::from_str(text) {
        Ok(doc) => doc,
        Err(e) => {
            out.malformed.push(MalformedManifestLine {
                manifest: manifest.to_string(),
                line: e
                    .span()
                    .map(|s| text[..s.start].matches('\n').count() as u32 + 1)
                    .unwrap_or(0),
                text: e.message().to_string(),
            });
            return out;
        }
    };
    let mut cursor = 0;
    if let Some(deps) = doc
        .get("project")
        .and_then(|p| p.get("dependencies"))
        .and_then(|d| d.as_array())
    {
        for spec in deps.iter().filter_map(|v| v.as_str()) {
            push_spec(&mut out, text, manifest, spec, &mut cursor);
        }
    }
    if let Some(groups) = doc
        .get("project")
        .and_then(|p| p.get("optional-dependencies"))
        .and_then(|d| d.as_table())
    {
        for deps in groups.values().filter_map(|v| v.as_array()) {
            for spec in deps.iter().filter_map(|v| v.as_str()) {
                push_spec(&mut out, text, manifest, spec, &mut cursor);
            }
        }
    }
    if let Some(deps) = doc
        .get("tool")
        .and_then(|t| t.get("poetry"))
        .and_then(|p| p.get("dependencies"))
        .and_then(|d| d.as_table())
    {
        for (name, value) in deps {
            if name == "python" {
                continue;
            }
            let constraint = match value {
                toml::Value::String(s) => Some(s.clone()),
                toml::Value::Table(t) => t.get("version").and_then(|v| v.as_str()).map(str::to_string),
                _ => None,
            };
            let (line, _) = line_of(text, name, 0);
            out.declarations.push(DeclaredDependency {
                package: normalize_package_name(name),
                version_constraint: constraint.filter(|c| c != "*"),
                manifest: manifest.to_string(),
                line: line.max(1),
            });
        }
    }
    out
}

fn parse_setup_cfg(text: &str, manifest: &str) -> ManifestParse {
    let mut out = ManifestParse::default();
    let mut section = String::new();
    let mut in_requires = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx as u32 + 1;
        let trimmed = raw.trim();
        if trimmed.starts_with('[') && trimmed.ends_with(']') {
            section = trimmed[1..trimmed.len() - 1].trim().to_string();
            in_requires = false;
            continue;
        }
        let indented = raw.starts_with(' ') || raw.starts_with('\t');
        if !indented {
            in_requires = false;
            if section == "options" {
                if let Some((key, value)) = trimmed.split_once('=') {
                    if key.trim() == "install_requires" {
                        in_requires = true;
                        let value = strip_comment(value).trim();
                        if !value.is_empty() {
                            push_cfg_line(&mut out, manifest, value, line_no, raw);
                        }
                    }
                }
            }
            continue;
        }
        if in_requires {
            let value = strip_comment(trimmed).trim();
            if !value.is_empty() {
                push_cfg_line(&mut out, manifest, value, line_no, raw);
            }
        }
    }
    out
}

fn push_cfg_line(out: &mut ManifestParse, manifest: &str, value: &str, line: u32, raw: &str) {
    match parse_requirement(value) {
        Some((package, version_constraint)) => out.declarations.push(DeclaredDependency {
            package,
            version_constraint,
            manifest: manifest.to_string(),
            line,
        }),
        None => out.malformed.push(MalformedManifestLine {
            manifest: manifest.to_string(),
            line,
            text: raw.to_string(),
        }),
    }
}

fn parse_setup_py(text: &str, manifest: &str) -> ManifestParse {
    static LIST: OnceLock<Regex> = OnceLock::new();
    static ITEM: OnceLock<Regex> = OnceLock::new();
    let list = LIST.get_or_init(|| {
        Regex::new(r"(?s)install_requires\s*=\s*\[(.*?)\]").expect("static regex")
    });
    let item = ITEM.get_or_init(|| Regex::new(r#"["']([^"']+)["']"#).expect("static regex"));
    let mut out = ManifestParse::default();
    if let Some(body) = list.captures(text).and_then(|c| c.get(1)) {
        for cap in item.captures_iter(body.as_str()) {
            let m = cap.get(1).expect("group 1");
            let abs = body.start() + m.start();
            let line = text[..abs].matches('\n').count() as u32 + 1;
            match parse_requirement(m.as_str()) {
                Some((package, version_constraint)) => out.declarations.push(DeclaredDependency {
                    package,
                    version_constraint,
                    manifest: manifest.to_string(),
                    line,
                }),
                None => out.malformed.push(MalformedManifestLine {
                    manifest: manifest.to_string(),
                    line,
                    text: m.as_str().to_string(),
                }),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::FileRole;

    fn manifest(path: &str, text: &str) -> RepoFile {
        RepoFile {
            rel_path: path.into(),
            role: FileRole::Manifest,
            bytes_len: text.len() as u64,
            text: Some(text.into()),
            sha256: String::new(),
        }
    }

    #[test]
    fn single_requirement() {
        let parsed = parse_manifest(&manifest("requirements.txt", "requests\n"));
        assert_eq!(
            parsed.declarations,
            [DeclaredDependency {
                package: "requests".into(),
                version_constraint: None,
                manifest: "requirements.txt".into(),
                line: 1
            }]
        );
    }

    #[test]
    fn empty_manifest() {
        assert_eq!(parse_manifest(&manifest("requirements.txt", "")), ManifestParse::default());
    }

    #[test]
    fn constraint_and_comment() {
        let parsed = parse_manifest(&manifest("requirements.txt", "# deps\n\nFlask>=2.0 # web\n"));
        assert_eq!(parsed.declarations.len(), 1);
        assert_eq!(parsed.declarations[0].package, "flask");
        assert_eq!(parsed.declarations[0].version_constraint.as_deref(), Some(">=2.0"));
        assert_eq!(parsed.declarations[0].line, 3);
    }

    #[test]
    fn malformed_lines_are_recorded_not_fatal() {
        let parsed = parse_manifest(&manifest("requirements.txt", "numpy\n!!bad\nrequests extra\n-r dev.txt\n"));
        assert_eq!(parsed.declarations.len(), 1);
        let lines: Vec<_> = parsed.malformed.iter().map(|m| m.line).collect();
        assert_eq!(lines, [2, 3]);
    }

    #[test]
    fn extras_and_markers() {
        let (name, c) = parse_requirement("uvicorn[standard]==0.20 ; python_version >= '3.8'").unwrap();
        assert_eq!(name, "uvicorn");
        assert_eq!(c.as_deref(), Some("==0.20 ; python_version >= '3.8'"));
    }

    #[test]
    fn pyproject_tables() {
        let text = "[project]\nname = \"x\"\ndependencies = [\n  \"httpx>=0.24\",\n  \"rich\",\n]\n\n[tool.poetry.dependencies]\npython = \"^3.10\"\nPyYAML = \"*\"\n";
        let parsed = parse_manifest(&manifest("pyproject.toml", text));
        let got: Vec<_> = parsed
            .declarations
            .iter()
            .map(|d| (d.package.as_str(), d.version_constraint.as_deref(), d.line))
            .collect();
        assert_eq!(got, [("httpx", Some(">=0.24"), 4), ("rich", None, 5), ("pyyaml", None, 10)]);
    }

    #[test]
    fn setup_cfg_and_setup_py() {
        let cfg = "[metadata]\nname = x\n\n[options]\ninstall_requires =\n    click>=8\n    attrs\npackages = find:\n";
        let parsed = parse_manifest(&manifest("setup.cfg", cfg));
        let got: Vec<_> = parsed.declarations.iter().map(|d| (d.package.as_str(), d.line)).collect();
        assert_eq!(got, [("click", 6), ("attrs", 7)]);

        let py = "from setuptools import setup\nsetup(\n    name='x',\n    install_requires=[\n        'numpy>=1.20',\n        \"pandas\",\n    ],\n)\n";
        let parsed = parse_manifest(&manifest("setup.py", py));
        let got: Vec<_> = parsed.declarations.iter().map(|d| (d.package.as_str(), d.line)).collect();
        assert_eq!(got, [("numpy", 5), ("pandas", 6)]);
    }
}
