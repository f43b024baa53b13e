//! The `detdiv` experiment harness: dataset generation, training, evaluation,
//! the attention × diversity ablation grid and the gradient-check suite.

pub mod ablate;
pub mod error;
pub mod eval;
pub mod files;
pub mod gen_data;
pub mod gradcheck;
pub mod train;

pub use error::{CliError, CliResult};

use clap::{Parser, Subcommand};
use detdiv_core::verify::VerifyOptions;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "detdiv", version, about = "Determinant-based diversity experiments")]
pub struct Cli {
    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic train/test split.
    GenData {
        /// Generator config (JSON). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train one configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A DVDS file, or a directory holding `test.dvds`.
        #[arg(long)]
        dataset: PathBuf,
        /// Experiment config whose model family the checkpoint must match.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the attention × diversity grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every gradient against finite differences.
    Gradcheck {
        /// Write `gradcheck.json` here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        corrupt_adjugate: bool,
    },
}

pub fn run(cli: Cli) -> CliResult<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::GenData { config, seed, out } => {
            let manifest = gen_data::gen_data(config.as_deref(), seed, &out)?;
            if !quiet {
                for (name, f) in &manifest.files {
                    println!("{name} {} samples sha256 {}", f.samples, f.sha256);
                }
            }
        }
        Command::Train { config, seed, out } => {
            let cfg = train::load_experiment(&config, seed, out.as_deref())?;
            let summary = train::train_run(&cfg, quiet)?;
            if !quiet {
                println!("final test accuracy {:.4}", summary.final_metrics.test_acc);
            }
        }
        Command::Eval { checkpoint, dataset, config, out } => {
            let family = match config {
                Some(path) => Some(train::load_experiment(&path, None, None)?.model_family),
                None => None,
            };
            let report = eval::eval(&checkpoint, &dataset, family, out.as_deref())?;
            println!("{}", eval::format_report(&report));
        }
        Command::Ablate { config, seed, out } => {
            let cfg = train::load_experiment(&config, seed, out.as_deref())?;
            let results = ablate::ablate(&cfg, quiet)?;
            println!("{}", ablate::table(&results));
        }
        Command::Gradcheck { out, corrupt_adjugate } => {
            let opts = VerifyOptions { corrupt_adjugate, ..VerifyOptions::default() };
            let report = gradcheck::gradcheck(&opts)?;
            println!("{}", gradcheck::format_report(&report));
            match out {
                Some(dir) => {
                    files::create_dir(&dir)?;
                    files::write_json(&dir.join("gradcheck.json"), &report)?;
                }
                None => println!("{}", serde_json::to_string(&report).expect("serializable")),
            }
            gradcheck::require_pass(&report)?;
        }
    }
    Ok(())
}
