//! `thingsyntax`: the offline pipeline and the query server.
//!
//! Commands share a work directory (`--dir`, default `.`):
//!
//! | file | written by | read by |
//! |---|---|---|
//! | `holdout.jsonl`, `corpus.jsonl`, `sources.jsonl` | `synth` | `fit-bins`, `fit-gmm`, `query`, `eval`, `kl`, `sweep`, `serve` |
//! | `statements.jsonl`, `blocks.jsonl` | `synth` | `profile`, `query` |
//! | `boundaries.json`, `prior.json` | `fit-bins` | `profile`, `query`, `serve` |
//! | `gmm.json` | `fit-gmm` | `profile`, `query`, `serve` |
//! | `rankings.jsonl` | `query` | `eval` |
//!
//! Every command also writes `<command>.manifest.json` with the effective
//! configuration, seeds and sha256 digests of its inputs and outputs.
//! Failures print `{"error": kind, "message": ...}` on stderr, exit non-zero
//! and leave no partial outputs behind.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thingsyntax::retrieval::DapVariant;
use thingsyntax::Property;
use thiserror::Error;

use crate::config::{FileConfig, FlagConfig, PipelineConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Output(String),
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Output(_) => "output",
            CliError::Pipeline(_) => "pipeline",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "thingsyntax", version, about = "Example-free scene retrieval from things syntax")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Work directory for datasets, models and reports.
    #[arg(long, global = true)]
    dir: Option<PathBuf>,
    /// Bins per property [default: 3].
    #[arg(long = "B", global = true)]
    bins: Option<usize>,
    /// GMM components [default: 1024].
    #[arg(long = "K", global = true)]
    components: Option<usize>,
    /// Master seed [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Laplace smoothing of histograms and the prior [default: 1].
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Comma-separated properties to keep (horizontal, vertical, size, ratio, color).
    #[arg(long, global = true, value_delimiter = ',')]
    properties: Option<Vec<Property>>,
    /// Score statements with the binary rather than the soft DAP form.
    #[arg(long, global = true)]
    binary_dap: bool,
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset with class queries.
    Synth(commands::SynthArgs),
    /// Fit equal-probability word boundaries and the statement prior on the holdout.
    FitBins(commands::HoldoutArgs),
    /// Fit the GMM on the holdout windows.
    FitGmm(commands::HoldoutArgs),
    /// Build scene profiles from the statements or blocks file.
    Profile(commands::ProfileArgs),
    /// Rank the corpus for every scene query.
    Query(commands::QueryArgs),
    /// AP per scene and MAP of the rankings.
    Eval(commands::EvalArgs),
    /// Per-property distributions and KL divergences between scenes.
    Kl(commands::KlArgs),
    /// MAP over bin counts, GMM sizes, noise levels or property subsets.
    Sweep(commands::SweepArgs),
    /// Serve the HTTP query API over an index directory.
    Serve(commands::ServeArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::FitBins(_) => "fit-bins",
            Command::FitGmm(_) => "fit-gmm",
            Command::Profile(_) => "profile",
            Command::Query(_) => "query",
            Command::Eval(_) => "eval",
            Command::Kl(_) => "kl",
            Command::Sweep(_) => "sweep",
            Command::Serve(_) => "serve",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.global.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let g = &cli.global;
    let flags = FlagConfig {
        dir: g.dir.clone(),
        bins: g.bins,
        components: g.components,
        seed: g.seed,
        alpha: g.alpha,
        properties: g.properties.clone(),
        dap_variant: g.binary_dap.then_some(DapVariant::Binary),
    };
    let cfg = PipelineConfig::resolve(flags, file)?;
    log::debug!("{} with {cfg:?}", cli.command.name());
    match cli.command {
        Command::Synth(a) => commands::synth(&cfg, &a),
        Command::FitBins(a) => commands::fit_bins(&cfg, &a),
        Command::FitGmm(a) => commands::fit_gmm_cmd(&cfg, &a),
        Command::Profile(a) => commands::profile(&cfg, &a),
        Command::Query(a) => commands::query(&cfg, &a),
        Command::Eval(a) => commands::eval(&cfg, &a),
        Command::Kl(a) => commands::kl(&cfg, &a),
        Command::Sweep(a) => commands::sweep(&cfg, &a),
        Command::Serve(a) => commands::serve(&cfg, &a),
    }
}

fn report(e: &CliError) -> ExitCode {
    let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    eprintln!("{body}");
    ExitCode::from(e.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            return report(&CliError::Usage(msg.trim().to_string()));
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
