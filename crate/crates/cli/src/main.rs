//! `mrrlvr`: curate → score → train → eval → report.

mod config;
mod curate;
mod report;
mod score;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::FileConfig;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_ANNOTATION: u8 = 3;
pub const EXIT_DATA: u8 = 4;

/// An error carrying the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

pub trait ExitContext<T> {
    fn exit_code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitContext<T> for Result<T, E> {
    fn exit_code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

pub fn fail(code: u8, msg: impl std::fmt::Display) -> Failure {
    Failure {
        code,
        error: anyhow::anyhow!("{msg}"),
    }
}

pub type CmdResult = Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(name = "mrrlvr", version, about = "Process-level self-supervised rewards for RLVR, at desk scale")]
struct Cli {
    /// JSON config with per-module sections; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice. Drawn and printed when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for curation and scoring.
    #[arg(long, global = true, env = "MRLVR_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Annotate a corpus and build the masked-fill, reordering and stage datasets.
    Curate(curate::Args),
    /// Score responses against curated instances.
    Score(score::Args),
    /// Train the toy policy for one stage.
    Train(train::Args),
    /// Pass@k means from per-problem sample counts.
    Eval(report::EvalArgs),
    /// Relative-gain report from a table of Pass@k means.
    Report(report::ReportArgs),
}

/// Everything a subcommand needs besides its own flags.
pub struct Context {
    pub file: FileConfig,
    pub seed: u64,
}

impl Context {
    /// Prints the resolved configuration and seed to stderr.
    pub fn announce(&self, command: &str, resolved: &impl serde::Serialize) {
        eprintln!("mrrlvr {command}: seed {}", self.seed);
        match serde_json::to_string_pretty(resolved) {
            Ok(s) => eprintln!("resolved config:\n{s}"),
            Err(e) => eprintln!("resolved config could not be printed: {e}"),
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .exit_code(1)?;
    }
    let file = match &cli.config {
        Some(path) => FileConfig::load(path).exit_code(EXIT_INPUT)?,
        None => FileConfig::default(),
    };
    let seed = match cli.seed.or(file.seed) {
        Some(s) => s,
        None => {
            let s = u64::from(rand::random::<u32>());
            eprintln!("no --seed given; drew {s}");
            s
        }
    };
    let ctx = Context { file, seed };
    match cli.command {
        Command::Curate(a) => curate::run(&ctx, a),
        Command::Score(a) => score::run(&ctx, a),
        Command::Train(a) => train::run(&ctx, a),
        Command::Eval(a) => report::run_eval(&ctx, a),
        Command::Report(a) => report::run_report(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
