//! `symtune`: corpus ingestion, pretraining, reward tuning, generation and
//! analysis from the command line.

mod commands;
mod config;
mod error;
mod lock;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ConfigFlags;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "symtune", version, about = "Tune a symbolic piano model against an audio reward")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic piano corpus to the corpus directory.
    SynthCorpus {
        #[arg(long, default_value_t = 200)]
        n: usize,
    },
    /// Filter and tokenize a MIDI directory into a token dataset.
    Ingest,
    /// Pretrain the model on the token dataset.
    Pretrain,
    /// Reward-tune the pretrained checkpoint; resumes an interrupted run
    /// found in the output directory.
    Tune,
    /// Sample MIDI files from a checkpoint.
    Generate {
        #[arg(long, default_value_t = 16)]
        n: usize,
    },
    /// Render MIDI files to WAV.
    Render {
        #[arg(long)]
        input: PathBuf,
        /// Crop to the scoring window.
        #[arg(long)]
        crop: bool,
    },
    /// Render, crop and score MIDI files.
    Score {
        #[arg(long)]
        input: PathBuf,
    },
    /// Feature reports and histogram tables, one set per directory.
    Analyze {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Piano-roll diversity and the average roll of a directory.
    Diversity {
        #[arg(long)]
        input: PathBuf,
    },
    /// Mean ratings of the same samples under several renderers.
    CompareRenderers {
        #[arg(long)]
        input: PathBuf,
        /// Extra soundfonts rendered with `--renderer-program`.
        #[arg(long = "compare-soundfont")]
        soundfonts: Vec<PathBuf>,
    },
    /// Print the fully resolved configuration.
    ConfigEcho,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = cli.config.resolve()?;
    match cli.command {
        Command::SynthCorpus { n } => commands::synth_corpus(&cfg, n),
        Command::Ingest => commands::ingest(&cfg),
        Command::Pretrain => commands::pretrain_cmd(&cfg),
        Command::Tune => commands::tune(&cfg),
        Command::Generate { n } => commands::generate_cmd(&cfg, n),
        Command::Render { input, crop } => commands::render_cmd(&cfg, &input, crop),
        Command::Score { input } => commands::score_cmd(&cfg, &input),
        Command::Analyze { inputs } => commands::analyze(&cfg, &inputs),
        Command::Diversity { input } => commands::diversity_cmd(&cfg, &input),
        Command::CompareRenderers { input, soundfonts } => commands::compare_renderers_cmd(&cfg, &input, &soundfonts),
        Command::ConfigEcho => {
            print!("{}", cfg.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
