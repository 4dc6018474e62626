use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use svsoftmax::{commands, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "svsoftmax", version, about = "Support-vector guided softmax experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Check analytic gradients of every configured loss against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Scale the analytic gradient so that every check fails.
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Train and evaluate every configured loss, then write the comparison table.
    Train(Common),
    /// Re-evaluate previously trained models.
    Eval(Common),
    /// Rebuild the comparison table from existing reports.
    Table(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output_dir` from the configuration.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides the dataset and training seeds.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf), CliError> {
        let mut cfg = ExperimentConfig::from_path(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.override_seed(seed);
        }
        if let Some(out) = &self.output {
            cfg.output_dir = out.clone();
        }
        let out = cfg.output_dir.clone();
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.verb {
        Verb::Gradcheck { common, corrupt_gradient } => {
            let (cfg, out) = common.load()?;
            let outcomes = commands::gradcheck(&cfg, &out, corrupt_gradient)?;
            log::info!("gradient check passed for {} losses", outcomes.len());
        }
        Verb::Train(common) => {
            let (cfg, out) = common.load()?;
            commands::train_eval(&cfg, &out)?;
        }
        Verb::Eval(common) => {
            let (cfg, out) = common.load()?;
            commands::eval(&cfg, &out)?;
        }
        Verb::Table(common) => {
            let (cfg, out) = common.load()?;
            print!("{}", commands::table(&cfg, &out)?);
        }
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
