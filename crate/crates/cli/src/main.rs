//! Command-line front end: generate, tighten, simulate, report and the
//! end-to-end server-farm benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dsmpc::disturbance::ScenarioBank;
use dsmpc::harness::config::{
    files, read_logs, run_pipeline, write_generated, write_logs, write_outcome, Experiment, ExperimentConfig, Outcome,
    PipelineError,
};
use dsmpc::harness::{BenchmarkError, BenchmarkSpec};
use dsmpc::mpc::{MpcError, SolverChoice};
use dsmpc::network::ConstraintKind;
use dsmpc::solver::{AdmmParams, CentralSettings};
use dsmpc::tightening::TighteningTable;

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "dsmpc", version, about = "Distributed stochastic MPC simulator")]
struct Cli {
    /// Experiment config (JSON). Defaults to the server-farm benchmark.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for tightening, realizations and cost samples.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the solver in the config.
    #[arg(long, global = true, value_enum)]
    solver: Option<SolverKind>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverKind {
    Central,
    Admm,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes the resolved config, network and scenario banks.
    Generate,
    /// Computes the tightening table from the tightening bank.
    Tighten,
    /// Runs the closed-loop simulations and writes trajectory logs.
    Simulate,
    /// Computes violation statistics from the logs.
    Report,
    /// generate, tighten, simulate and report in one go.
    Benchmark,
}

fn exit_code(err: &PipelineError) -> u8 {
    match err {
        PipelineError::InvalidConfig(_) | PipelineError::Network(_) => EXIT_INVALID_CONFIG,
        PipelineError::Benchmark(BenchmarkError::Network(_) | BenchmarkError::ErrorSim(_)) => EXIT_FAILURE,
        PipelineError::Benchmark(_) => EXIT_INVALID_CONFIG,
        PipelineError::Run { source, .. } if source.is_infeasible() => EXIT_INFEASIBLE,
        PipelineError::Run {
            source: MpcError::NotConverged { .. },
            ..
        } => EXIT_NOT_CONVERGED,
        _ => EXIT_FAILURE,
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::benchmark(BenchmarkSpec::default()),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.solver = match (cli.solver, cfg.solver) {
        (None, s) => s,
        (Some(SolverKind::Central), s @ SolverChoice::Central(_)) => s,
        (Some(SolverKind::Central), _) => SolverChoice::Central(CentralSettings::default()),
        (Some(SolverKind::Admm), s @ SolverChoice::Admm(_)) => s,
        (Some(SolverKind::Admm), _) => SolverChoice::Admm(AdmmParams::default()),
    };
    Ok(cfg)
}

fn load_bank(exp: &Experiment, path: &Path, fresh: impl Fn(&Experiment) -> Result<ScenarioBank, PipelineError>) -> Result<ScenarioBank, PipelineError> {
    if path.exists() {
        Ok(ScenarioBank::load(path)?)
    } else {
        fresh(exp)
    }
}

fn load_table(exp: &Experiment, out: &Path) -> Result<TighteningTable, PipelineError> {
    let path = out.join(files::TIGHTENING);
    if path.exists() {
        Ok(TighteningTable::load(&path)?)
    } else {
        let bank = load_bank(exp, &out.join(files::TIGHTENING_BANK), Experiment::tightening_bank)?;
        exp.tighten(&bank)
    }
}

fn print_outcome(outcome: &Outcome) {
    let v = &outcome.violations;
    println!("runs: {}", v.runs);
    for (name, kind) in [("state", ConstraintKind::State), ("input", ConstraintKind::Input)] {
        println!(
            "{name} violations: {} (max frequency {:.3}, subsystems {:?})",
            v.total_violations(kind),
            v.max_frequency(kind),
            v.violating_subsystems(kind)
        );
    }
    println!("tightened nominal input violations: {}", outcome.nominal_input_violations.len());
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = resolve_config(cli)?;
    let exp = Experiment::from_config(&cfg)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Generate => {
            let (bank, real) = write_generated(&exp, out)?;
            println!(
                "wrote {} subsystems, {} tightening samples, {} realizations to {}",
                exp.model.len(),
                bank.len(),
                real.len(),
                out.display()
            );
        }
        Command::Tighten => {
            let bank = load_bank(&exp, &out.join(files::TIGHTENING_BANK), Experiment::tightening_bank)?;
            let table = exp.tighten(&bank)?;
            std::fs::create_dir_all(out).map_err(|source| PipelineError::Io {
                path: out.display().to_string(),
                source,
            })?;
            table.save(&out.join(files::TIGHTENING))?;
            println!("wrote {}", out.join(files::TIGHTENING).display());
        }
        Command::Simulate => {
            let table = load_table(&exp, out)?;
            let real = load_bank(&exp, &out.join(files::REALIZATIONS), Experiment::realizations)?;
            let logs = exp.simulate(&table, &real)?;
            write_logs(&logs, out)?;
            println!("wrote {} trajectory logs to {}", logs.len(), out.display());
        }
        Command::Report => {
            let logs = read_logs(out)?;
            if logs.is_empty() {
                return Err(PipelineError::InvalidConfig(format!("no trajectory logs in {}", out.display())));
            }
            let table = load_table(&exp, out)?;
            let outcome = exp.report(&logs, &table);
            write_outcome(&outcome, out)?;
            print_outcome(&outcome);
        }
        Command::Benchmark => {
            let result = run_pipeline(&exp, Some(out))?;
            print_outcome(&result.outcome);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
