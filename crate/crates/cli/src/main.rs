use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mdq_core::pipeline::{self, ExperimentConfig};
use mdq_core::Error;

/// Drone micro-Doppler simulation, dataset generation, training and evaluation.
#[derive(Parser)]
#[command(name = "mdq", version)]
struct Cli {
    /// Worker threads (default: all cores). Use 1 for bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the seed of this step.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize one return and its spectrogram.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Drone profile name.
        #[arg(long)]
        profile: Option<String>,
        /// Add white noise at this SNR (dB).
        #[arg(long, allow_hyphen_values = true)]
        snr: Option<f64>,
        /// Simulate receiver noise only.
        #[arg(long)]
        noise_only: bool,
        /// Also write SVG figures.
        #[arg(long)]
        plot: bool,
    },
    /// Generate a labelled dataset file.
    Dataset {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a dataset file.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Sweep a checkpoint over the configured SNRs.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write SVG figures.
        #[arg(long)]
        plot: bool,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    match &common.config {
        Some(path) => {
            log::info!("loading config {}", path.display());
            ExperimentConfig::load(path)
        }
        None => {
            log::info!("no --config given, using defaults");
            Ok(ExperimentConfig::default())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    match cli.command {
        Command::Simulate { common, profile, snr, noise_only, plot } => {
            let mut config = load_config(&common)?;
            if let Some(p) = profile {
                config.simulate.profile = p;
            }
            if snr.is_some() {
                config.simulate.snr_db = snr;
            }
            config.simulate.noise_only |= noise_only;
            if let Some(seed) = common.seed {
                config.simulate.seed = seed;
            }
            config.validate()?;
            let sim = pipeline::run_simulate(&config, &common.out, plot)?;
            for f in &sim.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Dataset { common } => {
            let mut config = load_config(&common)?;
            if let Some(seed) = common.seed {
                config.dataset.seed = seed;
            }
            config.validate()?;
            let out = pipeline::run_dataset(&config, &common.out)?;
            println!("wrote {} (sha256 {})", out.data_path.display(), out.sha256);
            println!("wrote {}", out.manifest_path.display());
        }
        Command::Train { common, dataset } => {
            let mut config = load_config(&common)?;
            if let Some(seed) = common.seed {
                config.training.seed = seed;
            }
            config.validate()?;
            let out = pipeline::run_train(&config, &dataset, &common.out)?;
            let last = out.manifest.history.last().expect("at least one epoch");
            println!(
                "{} epochs ({:?}), final loss {:.6}, accuracy {:.4}, best epoch {}",
                last.epoch, out.manifest.stop_reason, last.mean_loss, last.accuracy, out.manifest.best_epoch
            );
            for p in [&out.final_path, &out.best_path, &out.manifest_path] {
                println!("wrote {}", p.display());
            }
        }
        Command::Eval { common, checkpoint, plot } => {
            let mut config = load_config(&common)?;
            if let Some(seed) = common.seed {
                config.evaluation.seed = seed;
            }
            config.validate()?;
            let summary = pipeline::run_eval(&config, &checkpoint, &common.out, plot)?;
            println!("snr_db  mean_f1  std_f1");
            for row in &summary.rows {
                let flag = if row.single_repeat { "  (single repeat)" } else { "" };
                println!("{:>6}  {:.4}   {:.4}{flag}", row.snr_db, row.mean_f1, row.std_f1);
            }
            println!("wrote {} files to {}", summary.files.len() + 1, common.out.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Parameter(_)) => 2,
        Some(Error::Numeric(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MDQ_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
