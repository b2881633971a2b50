//! Generate a seeded fault-injection corpus and score attribution on it.
//!
//! cargo run --example corpus_eval -- [count] [seed]

use envalign::align::LoopConfig;
use envalign::corpus::{evaluate_attribution, generate_corpus, template_names};
use envalign::exec::ExecConfig;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(24);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);

    let dir = tempfile::tempdir()?;
    let start = std::time::Instant::now();
    let cases = generate_corpus(dir.path(), count, seed, &template_names(), &ExecConfig::default())?;
    println!("generated {} cases in {:.1?}", cases.len(), start.elapsed());

    let start = std::time::Instant::now();
    let report = evaluate_attribution(dir.path(), &LoopConfig::default())?;
    println!("evaluated in {:.1?}", start.elapsed());
    println!("overall {}/{}", report.overall.correct, report.overall.total);
    for (fault, t) in &report.per_fault {
        println!("  {:<24} {}/{}", fault.as_str(), t.correct, t.total);
    }
    for (truth, row) in &report.confusion {
        let cells: Vec<String> = row.iter().map(|(p, n)| format!("{}={n}", p.as_str())).collect();
        println!("  {:<20} {}", truth.as_str(), cells.join(" "));
    }
    for c in report.cases.iter().filter(|c| c.predicted != Some(c.ground_truth)) {
        println!(
            "  miss {} {} -> {:?} {}",
            c.dir,
            c.fault.as_str(),
            c.predicted.map(|p| p.as_str()),
            c.error.as_deref().unwrap_or("")
        );
    }
    Ok(())
}
