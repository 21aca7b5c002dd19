use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orthocond_cli::{cmd_gradcheck, cmd_report, cmd_run, gradcheck, CliError};

#[derive(Parser)]
#[command(name = "orthocond", version, about = "Conditioning experiments for SVD meta-layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config and write traces.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Seeds trained in parallel (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Compare every analytic gradient with central differences.
    Gradcheck {
        #[arg(long, value_delimiter = ',', default_values_t = gradcheck::DEFAULT_DIMS)]
        dims: Vec<usize>,
        #[arg(long, default_value_t = gradcheck::DEFAULT_SEEDS)]
        seeds: u64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOL)]
        tol: f64,
    },
    /// Summarize a directory of trace files.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// Also write a log10 condition number chart (SVG) into the directory.
        #[arg(long)]
        chart: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = io::stdout().lock();
    let result: Result<(), CliError> = match cli.command {
        Command::Run { config, jobs } => {
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            cmd_run(&config, jobs, &mut stdout).map(drop)
        }
        Command::Gradcheck { dims, seeds, tol } => cmd_gradcheck(&dims, seeds, tol, &mut stdout).map(drop),
        Command::Report { dir, chart } => cmd_report(&dir, chart, &mut stdout).map(drop),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
