use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use envalign::align::{align, diagnose, Outcome};
use envalign::attribution::Source;
use envalign::config::ToolConfig;
use envalign::corpus::{evaluate_attribution, generate_corpus, template_names};
use envalign::env::build_env;
use envalign::exec::Phase;

const EXIT_OK: u8 = 0;
const EXIT_TOOL_ERROR: u8 = 1;
const EXIT_BUDGET_EXHAUSTED: u8 = 2;
const EXIT_NOT_PASSING: u8 = 3;

/// Iteratively align a Python repository with its execution environment.
///
/// Exit codes: 0 pass/success, 1 tool error, 2 budget exhausted,
/// 3 attribution found a non-pass verdict.
#[derive(Parser)]
#[command(name = "envalign", version)]
struct Cli {
    /// TOML configuration file (default: $ENVALIGN_CONFIG if set)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphKind {
    /// External environment graph: project, files, packages
    Ext,
    /// Repository dependency graph: files, modules, symbols, unresolved refs
    Int,
}

#[derive(clap::Args)]
struct ExecFlags {
    /// Validation phases to run, e.g. `install,launch`
    #[arg(long, value_delimiter = ',', value_parser = parse_phase)]
    phases: Option<Vec<Phase>>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the external or internal graph of a repository as JSON
    Graph {
        kind: GraphKind,
        repo: PathBuf,
        /// Write to this file instead of standard output
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build, execute, normalize evidence, and print the attribution verdict
    Attribute {
        repo: PathBuf,
        #[command(flatten)]
        exec: ExecFlags,
    },
    /// Run the alignment loop, editing the repository in place
    Align {
        repo: PathBuf,
        /// Maximum number of iterations
        #[arg(long)]
        budget: Option<u32>,
        /// Reviser command for delegated repairs (shell-quoted)
        #[arg(long)]
        reviser: Option<String>,
        /// External evidence normalizer command (shell-quoted)
        #[arg(long)]
        normalizer: Option<String>,
        /// Write the run report here as well as to standard output
        #[arg(long)]
        report: Option<PathBuf>,
        /// Keep durations and wall-clock stamps in the report
        #[arg(long)]
        timestamps: bool,
        #[command(flatten)]
        exec: ExecFlags,
    },
    /// Generate or evaluate a fault-injection corpus
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Write seeded single-fault cases and corpus.json
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Template names (default: all bundled)
        #[arg(long, value_delimiter = ',')]
        templates: Option<Vec<String>>,
    },
    /// Attribute every case once and print the accuracy report
    Eval { dir: PathBuf },
}

fn parse_phase(s: &str) -> Result<Phase, String> {
    Phase::ALL
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| format!("unknown phase {s:?}; expected install, launch, or test"))
}

fn split_command(cmd: &str) -> anyhow::Result<Vec<String>> {
    match shlex::split(cmd) {
        Some(argv) if !argv.is_empty() => Ok(argv),
        _ => bail!("cannot parse command {cmd:?}"),
    }
}

fn emit(json: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn apply_exec_flags(config: &mut ToolConfig, flags: &ExecFlags) {
    if let Some(phases) = &flags.phases {
        config.exec.enabled_phases = phases.clone();
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let mut config = ToolConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Graph { kind, repo, out } => {
            let knowledge = config.knowledge()?;
            let env = build_env(&repo, &config.scan, &knowledge)?;
            let json = match kind {
                GraphKind::Ext => env.g_ext.to_json(),
                GraphKind::Int => env.g_int.to_json(),
            };
            emit(&json, out.as_deref())?;
            eprintln!(
                "{} files, {} ext nodes, {} int nodes",
                env.snapshot.files.len(),
                env.g_ext.nodes.len(),
                env.g_int.nodes.len()
            );
            Ok(EXIT_OK)
        }
        Command::Attribute { repo, exec } => {
            apply_exec_flags(&mut config, &exec);
            let lc = config.loop_config()?;
            let d = diagnose(&repo, &lc)?;
            for w in &d.warnings {
                eprintln!("warning: {w}");
            }
            emit(&envalign::canonical::to_json(&d.verdict), None)?;
            eprintln!(
                "verdict: {}{}",
                d.verdict.source.as_str(),
                d.verdict.subject.as_deref().map(|s| format!(" ({s})")).unwrap_or_default()
            );
            Ok(if d.verdict.source == Source::Pass { EXIT_OK } else { EXIT_NOT_PASSING })
        }
        Command::Align { repo, budget, reviser, normalizer, report, timestamps, exec } => {
            apply_exec_flags(&mut config, &exec);
            if let Some(b) = budget {
                config.budget = b;
            }
            if let Some(r) = reviser {
                config.reviser = Some(split_command(&r)?);
            }
            if let Some(n) = normalizer {
                config.normalizer = Some(split_command(&n)?);
            }
            if report.is_some() {
                config.report = report;
            }
            config.timestamps |= timestamps;
            let lc = config.loop_config()?;
            if !repo.is_dir() {
                bail!("repository not found: {}", repo.display());
            }
            let report = align(&repo, &lc).context("writing report")?;
            emit(&report.to_json(), None)?;
            for it in &report.iterations {
                let v = it.verdict.as_ref();
                eprintln!(
                    "iteration {}: {}{}",
                    it.index,
                    v.map(|v| v.source.as_str()).unwrap_or("error"),
                    v.and_then(|v| v.subject.as_deref()).map(|s| format!(" ({s})")).unwrap_or_default()
                );
            }
            match report.outcome {
                Outcome::Success => Ok(EXIT_OK),
                Outcome::BudgetExhausted => {
                    eprintln!("budget exhausted after {} iterations", report.iterations.len());
                    Ok(EXIT_BUDGET_EXHAUSTED)
                }
                Outcome::Aborted => {
                    eprintln!("aborted: {}", report.error.as_deref().unwrap_or("unknown error"));
                    Ok(EXIT_TOOL_ERROR)
                }
            }
        }
        Command::Corpus { command: CorpusCommand::Gen { out, count, seed, templates } } => {
            let names: Vec<String> = templates.unwrap_or_else(|| template_names().iter().map(|s| s.to_string()).collect());
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            config.exec.validate()?;
            let cases = generate_corpus(&out, count, seed, &names, &config.exec)?;
            emit(&envalign::canonical::to_json(&cases), None)?;
            eprintln!("wrote {} cases to {}", cases.len(), out.display());
            Ok(EXIT_OK)
        }
        Command::Corpus { command: CorpusCommand::Eval { dir } } => {
            if !dir.is_dir() {
                bail!("corpus directory not found: {}", dir.display());
            }
            let lc = config.loop_config()?;
            let report = evaluate_attribution(&dir, &lc)?;
            emit(&report.to_json(), None)?;
            match report.overall.rate() {
                Some(r) => eprintln!(
                    "accuracy {}/{} ({:.1}%)",
                    report.overall.correct,
                    report.overall.total,
                    r * 100.0
                ),
                None => eprintln!("accuracy not applicable: empty corpus"),
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_TOOL_ERROR)
        }
    }
}
