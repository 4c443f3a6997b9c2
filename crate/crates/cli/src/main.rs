use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sobolev_prune::pipeline::{self, ExperimentConfig, PipelineError, StageModel};
use sobolev_prune::training::DerivativeSource;

#[derive(Parser)]
#[command(name = "sobolev-prune", version, about = "Train, prune and Sobolev fine-tune MLP pricing surrogates")]
struct Cli {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true, env = "SOBPRUNE_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed, overriding the config file.
    #[arg(long, global = true, env = "SOBPRUNE_SEED")]
    seed: Option<u64>,
    /// Run directory, overriding the config file.
    #[arg(long, global = true, env = "SOBPRUNE_OUT")]
    out: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.epochs=20`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Nn,
    Reference,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the training and retraining datasets.
    Generate,
    /// Train the baseline network.
    Train,
    /// Prune nodes by interval adjoint significance, then try removing layers.
    Prune,
    /// Sobolev fine-tuning of the reduced network.
    Finetune {
        #[arg(long, value_enum)]
        source: Source,
        /// Model to fine-tune (default: the layer-removal output).
        #[arg(long)]
        stage_model: Option<PathBuf>,
    },
    /// Evaluate a model file, or `analytic` for the closed-form pricer.
    Evaluate {
        #[arg(long)]
        stage_model: StageModel,
        /// Report name (default: derived from the file name).
        #[arg(long)]
        name: Option<String>,
    },
    /// Summarize the stage reports of the run directory.
    Report,
    /// Run every stage in order.
    All,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    cfg.validate()?;
    match cli.command {
        Command::Generate => {
            let m = pipeline::cmd_generate(&cfg)?;
            log::info!("generated {} files, config {}", m.files.len(), m.config_hash);
        }
        Command::Train => {
            pipeline::cmd_train(&cfg)?;
        }
        Command::Prune => {
            pipeline::cmd_prune(&cfg)?;
        }
        Command::Finetune {
            source,
            stage_model,
        } => {
            let source = match source {
                Source::Nn => DerivativeSource::TeacherNetwork,
                Source::Reference => DerivativeSource::ReferenceModel,
            };
            pipeline::cmd_finetune(&cfg, source, stage_model.as_deref())?;
        }
        Command::Evaluate { stage_model, name } => {
            pipeline::cmd_evaluate(&cfg, &stage_model, name.as_deref())?;
        }
        Command::Report => {
            print!("{}", pipeline::cmd_report(&cfg.out_dir)?.markdown());
        }
        Command::All => {
            print!("{}", pipeline::cmd_all(&cfg)?.markdown());
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
