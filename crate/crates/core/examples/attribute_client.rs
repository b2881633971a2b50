//! One diagnosis pass over the Client fixture: logs, evidence, verdict, plan.

use envalign::align::{diagnose, LoopConfig};
use envalign::bundle::write_client_fixture;
use envalign::exec::{ExecConfig, Phase};
use envalign::revision::plan_revision;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    write_client_fixture(dir.path())?;
    let config = LoopConfig {
        exec: ExecConfig::default().with_phases(&[Phase::Install, Phase::Launch]),
        ..LoopConfig::default()
    };
    let d = diagnose(dir.path(), &config)?;
    for log in &d.logs {
        println!("[{}] exit {:?}", log.phase.as_str(), log.exit_code);
        print!("{}", log.stderr);
    }
    for (i, r) in d.evidence.iter().enumerate() {
        println!("evidence {i}: {} {:?} {:?}", r.kind.as_str(), r.subject, r.origin_hint);
    }
    println!("{}", envalign::canonical::to_json(&d.verdict));
    let plan = plan_revision(&d.verdict, &d.env, &d.evidence);
    println!("{}", envalign::canonical::to_json(&plan.directives));
    Ok(())
}
