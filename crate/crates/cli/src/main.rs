//! Command-line front end: training, canned experiments, generation,
//! gradient checks and curve export.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use textvae::Error;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "textvae", version, about = "Convolutional and hybrid VAEs for character-level text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model from a config file.
    Train {
        /// TOML config with dotted keys; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Base directory for the run directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Override a config key, e.g. `--set train.alpha=0.5`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run a canned experiment grid.
    Experiment {
        #[arg(long, value_parser = ["historyless", "kl_tradeoff", "receptive_field", "tweets_demo"])]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training steps per run instead of the experiment default.
        #[arg(long)]
        steps: Option<u64>,
        /// Comma-separated seeds; every grid point runs once per seed.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
    },
    /// Greedy samples decoded from prior draws.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Greedy decodes along straight lines between prior draws.
    Interpolate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of endpoint pairs.
        #[arg(long, default_value_t = 1)]
        pairs: usize,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value = "ops", value_parser = ["ops", "layers", "models"])]
        scope: String,
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Curve data of a run as CSV on stdout.
    Curves {
        #[arg(long)]
        run: PathBuf,
    },
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Shape { .. } => "shape",
        Error::Domain { .. } => "domain",
        Error::Index(_) => "index",
        Error::Contract(_) => "contract",
        Error::NonFinite(_) => "numerical",
        Error::Data(_) => "data",
        Error::Config(_) => "config",
        Error::Checkpoint(_) => "checkpoint",
        Error::Io(_) => "io",
        Error::Csv(_) => "csv",
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::NonFinite(_) => 3,
        _ => 2,
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={}", one_line(first));
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: kind={} msg={}", error_kind(&e), one_line(&e.to_string()));
            ExitCode::from(exit_code(&e))
        }
    }
}
