//! Scan a repository and print both graphs plus their gaps.
//!
//! cargo run --example scan_and_graphs -- [repo]   (default: the bundled Client fixture)

use envalign::bundle::write_client_fixture;
use envalign::env::build_env;
use envalign::ext_graph::find_dependency_gaps;
use envalign::int_graph::find_unresolved_refs;
use envalign::knowledge::PackageKnowledge;
use envalign::scan::ScanConfig;

fn main() -> anyhow::Result<()> {
    let fixture = tempfile::tempdir()?;
    let repo = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            write_client_fixture(fixture.path())?;
            fixture.path().to_path_buf()
        }
    };
    let env = build_env(&repo, &ScanConfig::default(), &PackageKnowledge::bundled())?;
    println!("snapshot {} ({} files)", env.snapshot.digest, env.snapshot.files.len());
    for gap in find_dependency_gaps(&env.g_ext) {
        println!("gap {:?}: {} used in {:?}", gap.kind, gap.package, gap.using_files);
    }
    for u in find_unresolved_refs(&env.g_int) {
        let hint = u.best_match.map(|m| format!(" (did you mean {}?)", m.module)).unwrap_or_default();
        println!("unresolved {} from {:?}{hint}", u.target, u.importing_modules);
    }
    println!("{}", env.g_ext.to_json());
    println!("{}", env.g_int.to_json());
    Ok(())
}
