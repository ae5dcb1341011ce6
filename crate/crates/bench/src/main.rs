use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mrf_bench::{load_config, run, stages_for};

#[derive(Parser)]
#[command(name = "mrf", version, about = "Minimum restraint function benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the candidate and write the value function.
    Solve(Common),
    /// Solve, then check structure, brackets, decrease and integrability.
    Verify(Common),
    /// Solve, then synthesize trajectories from the configured starts.
    Synthesize(Common),
    /// Build the converse construction from the controllability data.
    Converse(Common),
    /// Run every configured stage.
    Bench(Common),
    /// Run every configured stage and write only the figures.
    Plot(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Print only the overall verdict.
    #[arg(long)]
    quiet: bool,
}

fn execute(cli: Cli) -> Result<bool> {
    let (name, c) = match &cli.command {
        Command::Solve(c) => ("solve", c),
        Command::Verify(c) => ("verify", c),
        Command::Synthesize(c) => ("synthesize", c),
        Command::Converse(c) => ("converse", c),
        Command::Bench(c) => ("bench", c),
        Command::Plot(c) => ("plot", c),
    };
    let mut plan = load_config(&c.config)?;
    if let Some(s) = c.seed {
        plan.seed = s;
    }
    if c.workers.is_some() {
        plan.workers = c.workers;
    }
    plan.stages = stages_for(name, &plan);
    if name == "plot" {
        plan.csv = false;
        plan.plots = true;
    }
    let out = run(&plan)?;
    out.write_to(&c.out)?;
    if c.quiet {
        println!("{}", if out.pass() { "PASS" } else { "FAIL" });
    } else {
        print!("{}", mrf_bench::report::render(&out));
        println!("outputs in {}", c.out.display());
    }
    Ok(out.pass())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
