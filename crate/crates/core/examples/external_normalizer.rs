//! Plug a local command in as the evidence normalizer. The command reads
//! `{"logs","g_ext","g_int"}` on stdin and prints evidence records; invalid
//! output falls back to the rule-based normalizer.

use envalign::align::{diagnose, LoopConfig, NormalizerMode};
use envalign::bundle::write_client_fixture;
use envalign::exec::{ExecConfig, Phase};

const SCRIPT: &str = r#"
import json, re, sys
req = json.load(sys.stdin)
out = []
for log in req["logs"]:
    m = re.search(r"No module named '([\w.]+)'", log["stderr"])
    if m:
        out.append({"phase": log["phase"], "kind": "missing-module", "subject": m.group(1),
                    "origin_hint": "external", "excerpt": m.group(0), "confidence": "heuristic", "frames": []})
print(json.dumps(out))
"#;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    write_client_fixture(dir.path())?;
    let config = LoopConfig {
        exec: ExecConfig::default().with_phases(&[Phase::Install, Phase::Launch]),
        normalizer: NormalizerMode::External(vec!["python3".into(), "-c".into(), SCRIPT.into()]),
        ..LoopConfig::default()
    };
    let d = diagnose(dir.path(), &config)?;
    for w in &d.warnings {
        println!("warning: {w}");
    }
    println!("{}", envalign::canonical::to_json(&d.evidence));
    println!("verdict {} {:?}", d.verdict.source.as_str(), d.verdict.subject);
    Ok(())
}
