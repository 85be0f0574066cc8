use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use swinfundus::preprocess::Split;

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(
    name = "swinfundus",
    version,
    about = "Shifted-window transformer for retinal fundus grading"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by commands that read a run configuration.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a configuration value, e.g. `--set train.max_epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub no_clahe: bool,
    #[arg(long)]
    pub no_crop: bool,
}

impl ConfigArgs {
    pub fn overrides(&self, out: Option<PathBuf>, no_augment: bool) -> Overrides {
        Overrides {
            seed: self.seed,
            out,
            set: self.set.clone(),
            no_clahe: self.no_clahe,
            no_crop: self.no_crop,
            no_augment,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic graded fundus dataset.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        n_per_class: usize,
        #[arg(long, default_value_t = 128)]
        image_size: usize,
        /// Apply random illumination ramps and gain.
        #[arg(long)]
        corrupt: bool,
    },
    /// Crop and equalize every image of a dataset into a mirrored layout.
    Preprocess {
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model; artifacts go to a run directory named by config hash and seed.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Parent of the run directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_augment: bool,
    },
    /// Score saved parameters on one split.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Where to write metrics.json and confusion.csv
        /// (default: `eval-<split>` next to the parameter file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and measured cost of global and windowed attention.
    Bench {
        /// Comma-separated token-grid sides.
        #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64, 128])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        channels: usize,
        #[arg(long, default_value_t = 4)]
        window: usize,
        #[arg(long, default_value_t = 1)]
        heads: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "bench")]
        out: PathBuf,
    },
}
