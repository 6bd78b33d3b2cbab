use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stgp_cli::alloc::CountingAlloc;
use stgp_cli::{bench, commands, exit_code, Invocation};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser)]
#[command(name = "stgp", version, about = "Generalized spatiotemporal Gaussian process models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate(Common),
    /// Run the MCMC sampler on a dataset.
    Fit(Common),
    /// Predict the mean and the spatial covariance at new times or places.
    Predict(Common),
    /// Posterior summaries, TESD estimates and connection graphs.
    Summarize(Common),
    /// Time the structured covariance algebra against dense factorization.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl From<Common> for Invocation {
    fn from(c: Common) -> Self {
        Invocation {
            config: c.config,
            seed: c.seed,
            out: c.out,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Simulate(c) => commands::simulate(&c.into()),
        Command::Fit(c) => commands::fit(&c.into()).map(|(_, paths)| paths),
        Command::Predict(c) => commands::predict(&c.into()),
        Command::Summarize(c) => commands::summarize(&c.into()),
        Command::Bench(c) => bench::bench(&c.into()),
    };
    match res {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
