use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmpart_cli::{
    cmd_bench, cmd_bounds, cmd_mc, cmd_reach, commands::describe, CliError, Experiment,
};

#[derive(Parser)]
#[command(
    name = "mmpart",
    version,
    about = "Interval reachability for neural-network controlled systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the reachable tube; writes tube.csv, summary.json, timing.csv.
    Reach(Common),
    /// Repeat the computation and report timing statistics.
    Bench(Common),
    /// Check sampled trajectories against the tube (exit 2 on a violation).
    Mc(Common),
    /// Contraction diagnostics along the computed tube.
    Bounds(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte-Carlo seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Repetitions for `bench`; overrides `repetitions`.
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads; 1 runs the sequential reference path.
    #[arg(long)]
    threads: Option<usize>,
    /// Override a configuration value, e.g. `--set algorithm.max_depth=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn run(cmd: Command) -> Result<String, CliError> {
    let (Command::Reach(c) | Command::Bench(c) | Command::Mc(c) | Command::Bounds(c)) = &cmd;
    let exp = Experiment::load(&c.config, &c.set)?;
    for w in &exp.warnings {
        eprintln!("warning: {w}");
    }
    let out = c
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&exp.config.output_dir));
    let parallel = c.threads != Some(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(c.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Numeric(format!("thread pool: {e}")))?;
    let v = pool.install(|| match &cmd {
        Command::Reach(_) => cmd_reach(&exp, &out, parallel),
        Command::Bench(_) => cmd_bench(
            &exp,
            &out,
            c.reps.unwrap_or(exp.config.repetitions),
            parallel,
        ),
        Command::Mc(_) => cmd_mc(&exp, &out, c.seed.unwrap_or(exp.config.seed), parallel),
        Command::Bounds(_) => cmd_bounds(&exp, &out, parallel),
    })?;
    Ok(describe(&exp, &v))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
