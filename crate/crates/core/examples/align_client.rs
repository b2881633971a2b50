//! The motivating example end to end: align the Client fixture with
//! mechanical repairs only, then show what changed.

use envalign::align::{align, LoopConfig};
use envalign::bundle::write_client_fixture;
use envalign::exec::{ExecConfig, Phase};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    write_client_fixture(dir.path())?;
    let config = LoopConfig {
        exec: ExecConfig::default().with_phases(&[Phase::Install, Phase::Launch]),
        ..LoopConfig::default()
    };
    let report = align(dir.path(), &config)?;
    for it in &report.iterations {
        let v = it.verdict.as_ref().expect("verdict");
        println!("iteration {}: {} {:?}", it.index, v.source.as_str(), v.subject);
        if let Some(applied) = &it.apply_result {
            for d in &applied.applied {
                println!("  applied {} to {}", d.action.name(), d.target_file);
            }
        }
    }
    println!("outcome {:?}", report.outcome);
    println!("requirements.txt: {:?}", std::fs::read_to_string(dir.path().join("requirements.txt"))?);
    println!("main.py:\n{}", std::fs::read_to_string(dir.path().join("main.py"))?);
    Ok(())
}
