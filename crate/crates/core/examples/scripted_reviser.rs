//! A residual logic fault is beyond mechanical repair; a scripted reviser
//! (here a closure, in practice any local command) fixes it.

use envalign::align::{align_with, LoopConfig};
use envalign::bundle::write_files;
use envalign::revision::{FnReviser, ReviserError, ReviserRequest};

const REPO: &[(&str, &str)] = &[
    ("main.py", "from calc import mean\nprint(mean([1, 2, 3]))\n"),
    ("calc.py", "def mean(xs):\n    return sum(xs) / (len(xs) + 1)\n"),
    ("tests/__init__.py", ""),
    (
        "tests/test_calc.py",
        "import unittest\n\nfrom calc import mean\n\n\nclass T(unittest.TestCase):\n    def test_mean(self):\n        self.assertEqual(mean([2, 4]), 3)\n",
    ),
];

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    write_files(dir.path(), REPO)?;
    let reviser = FnReviser(|req: &ReviserRequest<'_>| {
        for d in req.plan.delegated() {
            println!("reviser asked: {}", d.target_file);
        }
        let path = req.workspace.join("calc.py");
        let text = std::fs::read_to_string(&path).map_err(|e| ReviserError::ProcessFailure(e.to_string()))?;
        std::fs::write(&path, text.replace("len(xs) + 1", "len(xs)")).map_err(|e| ReviserError::ProcessFailure(e.to_string()))
    });
    let report = align_with(dir.path(), &LoopConfig::default(), Some(&reviser));
    for it in &report.iterations {
        println!("iteration {}: {}", it.index, it.verdict.as_ref().map(|v| v.source.as_str()).unwrap_or("error"));
    }
    println!("outcome {:?}", report.outcome);
    Ok(())
}
