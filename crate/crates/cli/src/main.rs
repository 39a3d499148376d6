//! `spkadv`: synthesize a corpus, train the speaker model, simulate rooms,
//! craft universal perturbations and evaluate them.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "spkadv", version, about)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "spkadv.toml")]
    config: PathBuf,

    /// Run directory; every stage reads and writes below it.
    #[arg(long, short, global = true, default_value = "run")]
    out: PathBuf,

    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Properties,
    Gradients,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Channel {
    None,
    TrainRir,
    TestRir,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic speaker corpus into <out>/corpus.
    SynthCorpus,
    /// Train the speaker classifier into <out>/model.
    TrainModel,
    /// Simulate the room impulse response set into <out>/rirs.
    GenRirs,
    /// Train one universal perturbation per target into <out>/attack-<mode>.
    AttackUniversal,
    /// Attack test utterances one at a time into <out>/individual.
    AttackIndividual {
        /// Target speaker (default: the first configured target).
        #[arg(long)]
        target: Option<usize>,
    },
    /// Measure success rates, or run a built-in check suite.
    Evaluate {
        /// Run a check suite instead of evaluating perturbations.
        #[arg(long, value_enum)]
        suite: Option<Suite>,
        /// Acoustic channel between the perturbed signal and the model.
        #[arg(long, value_enum, default_value = "none")]
        channel: Channel,
        /// Directory holding the perturbations (default: <out>/attack-<mode>).
        #[arg(long)]
        perturbations: Option<PathBuf>,
        /// Evaluate all-zero perturbations instead (chance-level baseline).
        #[arg(long, conflicts_with = "perturbations")]
        zero: bool,
    },
    /// Time perturbation application against the individual attack.
    Bench,
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    if let Command::Evaluate {
        suite: Some(suite), ..
    } = cli.command
    {
        // Suites are self-contained and need no configuration.
        return commands::run_suite(suite);
    }
    let cfg = RunConfig::load(&cli.config)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::SynthCorpus => commands::synth_corpus(&cfg, out),
        Command::TrainModel => commands::train_model(&cfg, out),
        Command::GenRirs => commands::gen_rirs(&cfg, out),
        Command::AttackUniversal => commands::attack_universal(&cfg, out),
        Command::AttackIndividual { target } => commands::attack_individual(&cfg, out, target),
        Command::Evaluate {
            channel,
            perturbations,
            zero,
            ..
        } => commands::evaluate(&cfg, out, channel, perturbations.as_deref(), zero),
        Command::Bench => commands::bench(&cfg, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.into()
        }
    }
}
