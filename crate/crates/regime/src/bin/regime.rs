//! Thin experiment CLI over the `regime` library.
//!
//! Exit codes: 0 on success, 1 on run errors, 2 on configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use regime::harness::{self, GeneratedInstance};
use regime::linear::linear_to_kv;
use regime::textio::KvDoc;
use regime::RegimeError;

#[derive(Parser)]
#[command(name = "regime", about = "Experimental-design experiments for preference-based RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override or add a key, e.g. `--set algo.n=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Run seed (shorthand for `--set seed=<v>`).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path (CSV for sweeps, kv for gen-instance, JSON report
    /// otherwise). Prints to stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// One trajectory-comparison run (known or reward-free transitions).
    RunTabular(ConfigArgs),
    /// One linear-MDP run.
    RunLinear(ConfigArgs),
    /// One action-comparison run.
    RunAction(ConfigArgs),
    /// Grid x seeds sweep with CSV output.
    Sweep(ConfigArgs),
    /// Run the registered property-audit suites.
    Audit(ConfigArgs),
    /// Generate an instance file from the config.
    GenInstance(ConfigArgs),
}

fn load_doc(args: &ConfigArgs, forced_mode: Option<&str>) -> Result<KvDoc, RegimeError> {
    let mut doc = match &args.config {
        Some(path) => KvDoc::load(path)?,
        None => KvDoc::new(),
    };
    if let Some(mode) = forced_mode {
        doc.set("mode", mode);
    }
    for entry in &args.sets {
        let (key, value) = entry.split_once('=').ok_or_else(|| {
            RegimeError::Config(format!("--set expects KEY=VALUE, got `{entry}`"))
        })?;
        doc.set(key.trim(), value.trim());
    }
    Ok(doc)
}

fn emit(args: &ConfigArgs, content: &str) -> Result<(), RegimeError> {
    match &args.output {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn run_one(args: &ConfigArgs, mode: &str) -> Result<(), RegimeError> {
    let doc = load_doc(args, Some(mode))?;
    let seed = doc.get_u64("seed")?.unwrap_or(args.seed);
    let report = harness::run_single(&doc, seed, None)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    emit(args, &text)?;
    eprintln!(
        "{}: gap {:.6} (optimal {:.6}, achieved {:.6}), {} labels, {} trajectories",
        report.algorithm,
        report.gap,
        report.optimal_value,
        report.achieved_value,
        report.n_human_labels,
        report.n_trajectories
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<bool, RegimeError> {
    match &cli.command {
        Command::RunTabular(args) => run_one(args, "tabular").map(|()| true),
        Command::RunLinear(args) => run_one(args, "linear").map(|()| true),
        Command::RunAction(args) => run_one(args, "action").map(|()| true),
        Command::Sweep(args) => {
            let doc = load_doc(args, None)?;
            let out = harness::run_sweep(&doc)?;
            match &args.output {
                Some(path) => {
                    std::fs::write(path, &out.csv)?;
                    let summary_path = path.with_extension("summary.txt");
                    std::fs::write(&summary_path, &out.summary)?;
                    eprint!("{}", out.summary);
                }
                None => {
                    print!("{}", out.csv);
                    eprint!("{}", out.summary);
                }
            }
            Ok(!out.any_errors)
        }
        Command::Audit(args) => {
            let doc = load_doc(args, None)?;
            let outcome = harness::run_audits(&doc)?;
            let text = outcome.render();
            emit(args, &text)?;
            Ok(outcome.all_pass)
        }
        Command::GenInstance(args) => {
            let doc = load_doc(args, None)?;
            let instance = harness::generate_instance(&doc)?;
            let kv = match &instance {
                GeneratedInstance::Tabular(mdp) => mdp.to_kv(),
                GeneratedInstance::Linear(lin) => linear_to_kv(lin),
            };
            emit(args, &kv.render())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                RegimeError::Config(_) | RegimeError::Parse(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
