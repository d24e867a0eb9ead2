//! `penmentor`: fit styles, generate teaching trajectories, run simulated
//! sessions and experiments, and serve live sessions.
//!
//! Data goes to stdout or `--out`; progress goes to stderr. Exit status is
//! 0 on success, 1 on runtime failure and 2 on bad usage or invalid input.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use penmentor::session::Method;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "penmentor", version, about = "Style-adaptive handwriting teaching engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ConfigArg {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long, env = "PENMENTOR_CONFIG", global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a style model to single-stroke writings.
    FitStyle(FitStyleArgs),
    /// Generate a teaching trajectory for a character from style models.
    Generate(GenerateArgs),
    /// Run one simulated learner through one session.
    Session(SessionArgs),
    /// Run the full simulated experiment and write the report.
    Experiment(ExperimentArgs),
    /// Serve live sessions over HTTP and WebSocket.
    Serve(ServeArgs),
}

#[derive(Args)]
pub struct FitStyleArgs {
    /// Writing files, each a JSON `{timestamps, points}` stroke.
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Mixture components.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    pub z: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Args)]
pub struct GenerateArgs {
    /// One model for every stroke, or one per stroke in stroke order.
    #[arg(long = "style-model", required = true, num_args = 1..)]
    pub style_models: Vec<PathBuf>,
    #[arg(long)]
    pub character: String,
    /// Character file; the configured or built-in set otherwise.
    #[arg(long)]
    pub characters: Option<PathBuf>,
    /// Interior via-points for the whole character.
    #[arg(long, default_value_t = 5)]
    pub h: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Args)]
pub struct SessionArgs {
    #[arg(long)]
    pub character: String,
    #[arg(long, default_value = "TEACHINGBOT")]
    pub method: Method,
    /// Roster id, `P<level>-<index>`.
    #[arg(long, default_value = "P0-0")]
    pub learner: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
    /// Replaces the configured master seeds with this one.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub parallel: Option<u32>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Args)]
pub struct ServeArgs {
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Event log replayed at start and appended to while serving.
    #[arg(long, env = "PENMENTOR_EVENTS")]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub characters: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("PENMENTOR_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
    let result = match cli.command {
        Command::FitStyle(a) => commands::fit_style(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Session(a) => commands::session(&a),
        Command::Experiment(a) => commands::experiment(&a),
        Command::Serve(a) => commands::serve(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
