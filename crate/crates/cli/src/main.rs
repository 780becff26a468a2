use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgrec_core::config::ExperimentConfig;
use kgrec_core::experiment;
use kgrec_core::synthetic::generate;
use kgrec_core::{Error, Result};

/// Knowledge-graph recommender with learned neighbor sampling.
#[derive(Parser)]
#[command(name = "kgrec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build id maps, the item co-graph and the train/test split.
    Preprocess(Common),
    /// Train from preprocessed artifacts and write a checkpoint.
    Train(Common),
    /// Score the checkpoint and write metric tables.
    Evaluate(Common),
    /// Compare sampling strategies and neighbor sizes over several seeds.
    Ablate(Common),
    /// Write the planted-structure dataset as raw TSVs.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output directory for `kg.tsv` and `interactions.tsv`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                ExperimentConfig::from_kv_text(&text)?
            }
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            cfg.set_override(kv)?;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(c) => {
            let s = experiment::preprocess(&c.resolve()?)?;
            print!("{}", s.to_tsv());
        }
        Command::Train(c) => {
            for s in experiment::train(&c.resolve()?)? {
                println!("epoch {:>3}  loss {:.6}  tau {:.4}", s.epoch, s.loss, s.tau);
            }
        }
        Command::Evaluate(c) => {
            print!("{}", experiment::evaluate_checkpoint(&c.resolve()?)?.to_text());
        }
        Command::Ablate(c) => {
            print!("{}", experiment::ablate(&c.resolve()?)?.to_tsv());
        }
        Command::Synth { common, out } => {
            let cfg = common.resolve()?;
            generate(&cfg.synthetic)?.write(&out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
