use std::path::PathBuf;
use std::process;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use mlcld_cli::commands;

#[derive(Parser)]
#[command(
    name = "mlcld",
    version,
    about = "Multi-label contrastive pretraining with label-distribution recovery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Contrastive pretraining; writes a checkpoint and per-epoch loss log.
    Pretrain {
        /// Config file (flat key=value lines)
        #[arg(long)]
        config: PathBuf,
        /// Master seed, overriding the config's `seed`
        #[arg(long)]
        seed: Option<u64>,
        /// Config override, e.g. --set pretrain.alpha=0.1 (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Run directory, overriding the config's `run.dir`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// BCE fine-tuning of a pretrained checkpoint.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to start from
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Six-metric evaluation of a checkpoint on a test set.
    Evaluate {
        /// Checkpoint to evaluate
        #[arg(long)]
        from: PathBuf,
        /// Test ARFF file (defaults to the config's `data.test_arff`)
        #[arg(long)]
        test: Option<PathBuf>,
        /// Label-list XML file (defaults to the config's `data.labels_xml`)
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Decision threshold on scores (defaults to `eval.threshold`)
        #[arg(long)]
        threshold: Option<f64>,
        /// Config supplying the training set for standardization plus
        /// threshold and activation defaults
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline per (alpha, beta, seed) grid cell; one CSV row each.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated alpha values, e.g. 0.001,0.01,0.1,1
        #[arg(long)]
        alpha: String,
        /// Comma-separated beta values
        #[arg(long)]
        beta: String,
        /// Comma-separated seeds
        #[arg(long)]
        seeds: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the bundled synthetic benchmark datasets.
    GenData {
        /// Output directory
        #[arg(long, default_value = "data")]
        out: PathBuf,
        /// Which dataset to write: yeast, scene, or all
        #[arg(long, default_value = "all")]
        dataset: String,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Pretrain { config, seed, set, out } => {
            commands::pretrain(&config, seed, &set, out.as_deref())
        }
        Command::Finetune { config, from, seed, set, out } => {
            commands::finetune(&config, &from, seed, &set, out.as_deref())
        }
        Command::Evaluate { from, test, labels, threshold, config, set, out } => {
            commands::evaluate(
                &from,
                test.as_deref(),
                labels.as_deref(),
                threshold,
                config.as_deref(),
                &set,
                out.as_deref(),
            )
        }
        Command::Sweep { config, alpha, beta, seeds, set, out } => {
            commands::sweep(&config, &alpha, &beta, &seeds, &set, out.as_deref())
        }
        Command::GenData { out, dataset } => commands::gen_data(&out, &dataset),
    };
    if let Err(e) = result {
        eprintln!("{e}");
        process::exit(e.exit_code());
    }
}
