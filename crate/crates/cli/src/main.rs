//! `sspd`: generate traces, detect super points over discrete or sliding
//! windows, simulate distributed watch points, and score the results.

mod commands;
mod config;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sspd_core::{Error, ErrorClass};

use commands::{DetectArgs, DistsimArgs, EvalArgs, GenerateArgs, PlanArgs, SlideArgs};

#[derive(Parser, Debug)]
#[command(
    name = "sspd",
    version,
    about = "Super point detection over IP-pair streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic trace and its ground-truth sidecar.
    Generate(GenerateArgs),
    /// Discrete-window detection.
    Detect(DetectArgs),
    /// Sliding-window detection.
    Slide(SlideArgs),
    /// Simulated watch points and global server.
    Distsim(DistsimArgs),
    /// FPR/FNR/FTR of a report file against ground truth.
    Eval(EvalArgs),
    /// LDCA row planner.
    Plan(PlanArgs),
}

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Internal(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    fn class(&self) -> (&'static str, u8) {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => ("config", 2),
                ErrorClass::Data => ("data", 3),
            },
            CliError::Internal(_) => ("internal", 4),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Internal(msg) => write!(f, "internal assertion failed: {msg}"),
        }
    }
}

fn thread_count(cli: &Cli) -> usize {
    match &cli.command {
        Command::Detect(a) => a.sketch.threads,
        Command::Slide(a) => a.common.sketch.threads,
        Command::Distsim(a) => a.common.sketch.threads,
        _ => 0,
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let threads = thread_count(cli);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Detect(a) => commands::detect(a),
        Command::Slide(a) => commands::slide(a),
        Command::Distsim(a) => commands::distsim(a),
        Command::Eval(a) => commands::eval(a),
        Command::Plan(a) => commands::plan(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = e.class();
            eprintln!(
                "error class={class} exit={code} message={:?}",
                e.to_string()
            );
            ExitCode::from(code)
        }
    }
}
