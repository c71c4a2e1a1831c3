use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pseudospin::harness::{execute, Command, RunOptions};

#[derive(Parser)]
#[command(
    name = "pseudospin",
    version,
    about = "Weak-measurement pseudo-spin pointer experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Monte Carlo sweeps (presets or custom grids)
    Sweep(Common),
    /// Fisher information and sensitivity tables
    Fisher(Common),
    /// A single integration window
    Simulate(Common),
    /// Pixelated detector against the two-bin pointer
    CompareBaseline(Common),
    /// Run the invariant suite
    Verify(Common),
}

#[derive(clap::Args)]
struct Common {
    /// TOML experiment config
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Sweep(c) => (Command::Sweep, c),
        Cmd::Fisher(c) => (Command::Fisher, c),
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::CompareBaseline(c) => (Command::CompareBaseline, c),
        Cmd::Verify(c) => (Command::Verify, c),
    };

    let text = match std::fs::read_to_string(&common.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            return ExitCode::from(2);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        pool = pool.num_threads(n as usize);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(3);
        }
    };
    let options = RunOptions {
        seed: common.seed,
        out: common.out,
    };

    match pool.install(|| execute(command, &text, &options)) {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            println!("wrote {}", summary.output.display());
            if summary.failed_checks > 0 {
                eprintln!("error: {} check(s) failed", summary.failed_checks);
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
