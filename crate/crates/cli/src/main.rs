//! `iqa`: ingest, corpus, synth, indicators, train, eval and report.

mod commands;
mod config;
mod layout;

use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::{Ctx, Failure};
use config::RunConfig;

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "iqa", version, about = "Image quality assessment pipeline: data, training, evaluation and reports")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    jobs: Option<NonZeroUsize>,
    /// Output directory shared by all commands.
    #[arg(long, global = true, default_value = "iqa-run")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate, normalize and split manifests into <out>/manifests.
    Ingest {
        /// Manifest files; the config's `manifests` when omitted.
        manifests: Vec<PathBuf>,
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Build the instruction corpus from <out>/manifests.
    BuildCorpus,
    /// Generate the synthetic suite: images, raw manifests, latent sidecars.
    Synth,
    /// Compute indicator and feature tables for every manifest.
    Indicators,
    /// Train the four strategy plans (and the transfer matrix).
    Train,
    /// Evaluate checkpoints, or external responses with --responses.
    Eval {
        /// File of `id<TAB>answer` lines or directory of `<id>.txt` files.
        #[arg(long)]
        responses: Option<PathBuf>,
    },
    /// Render evaluation results as markdown and JSON lines.
    Report,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Validation)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(Failure::Validation)?;
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.get())
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    let ctx = Ctx { cfg, out: cli.out };
    match cli.command {
        Command::Ingest { manifests, train_fraction } => commands::ingest(&ctx, &manifests, train_fraction),
        Command::BuildCorpus => commands::build_corpus(&ctx),
        Command::Synth => commands::synth(&ctx),
        Command::Indicators => commands::indicators(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Eval { responses } => commands::eval(&ctx, responses.as_deref()),
        Command::Report => commands::report(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
