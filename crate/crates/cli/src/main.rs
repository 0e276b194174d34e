//! `evoflow`: evolve, inspect and query a population of workflows.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use evoflow_cli::{cmd_bench, cmd_evolve, cmd_front, cmd_infer, cmd_init, CliError};
use evoflow_core::canonical::to_canonical_string;
use evoflow_core::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "evoflow",
    version,
    about = "Niching evolution of agentic workflows on the cost/performance plane"
)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, short, global = true, default_value = "evoflow.json")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the initial population and write the first snapshot.
    Init {
        /// Clear an existing run first.
        #[arg(long)]
        force: bool,
    },
    /// Resume from the last checkpoint and run more steps.
    Evolve {
        #[arg(long)]
        steps: u64,
    },
    /// Answer a query with the best matching workflow.
    Infer {
        #[arg(long)]
        query: String,
        /// Only consider workflows whose mean cost is within this budget.
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Write front.csv and print the front and its hypervolume.
    Front,
    /// Run the simulated evolution experiment described by a suite file.
    Bench {
        #[arg(long)]
        suite: PathBuf,
    },
}

fn json<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    to_canonical_string(v).map_err(|e| CliError::Failed(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(&cli.config)?;
    match cli.command {
        Command::Init { force } => {
            let m = cmd_init(&cfg, force)?;
            println!(
                "initialized {} members at {}",
                m.members.len(),
                cfg.run_dir.display()
            );
        }
        Command::Evolve { steps } => {
            let s = cmd_evolve(&cfg, steps)?;
            println!("{}", json(&s)?);
        }
        Command::Infer { query, budget } => {
            let out = cmd_infer(&cfg, &query, budget)?;
            println!("{}", json(&out)?);
        }
        Command::Front => {
            let out = cmd_front(&cfg)?;
            print!("{}", out.csv);
            println!(
                "hypervolume={}",
                evoflow_core::canonical::format_real(out.hypervolume)
            );
        }
        Command::Bench { suite } => {
            let r = cmd_bench(&cfg, &suite)?;
            for s in &r.seeds {
                let (ok, n) = s.monotone_steps();
                println!(
                    "seed {}: hv {:.4} -> {:.4}, monotone {ok}/{n}, tiers {}",
                    s.seed,
                    s.hypervolume.first().copied().unwrap_or(0.0),
                    s.hypervolume.last().copied().unwrap_or(0.0),
                    s.distinct_tiers()
                );
            }
            println!(
                "improved {}/{}; monotone {}/{}; diverse {}/{}",
                r.improved,
                r.seeds.len(),
                r.monotone.0,
                r.monotone.1,
                r.diverse,
                r.seeds.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
