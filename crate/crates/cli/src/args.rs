// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use resstream::featviz::Objective;
use resstream::resnet::{studied_blocks, BlockRef, Role};

use crate::config::WeightsSource;

#[derive(Debug, Parser)]
#[command(name = "resstream", version, about = "Residual-stream analysis of ResNet18 channels")]
pub struct Cli {
    /// Increase log verbosity (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a weight export and print its tensor count and hash.
    CheckWeights {
        /// Manifest path or export directory, or `synthetic[:SEED]`.
        #[arg(long)]
        weights: WeightsSource,
    },
    /// Feature visualization of one channel at one tap.
    Viz {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        block: BlockRef,
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long)]
        channel: usize,
        #[arg(long, value_enum, default_value = "center")]
        objective: ObjectiveArg,
    },
    /// Mix ratios of every channel of a block: CSV, JSON and histogram.
    Mix {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        block: BlockRef,
    },
    /// Scale criteria of every channel of a block and a montage of the
    /// channels ranked highest by the scale metric.
    Scale {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        block: BlockRef,
        /// Channels in the montage.
        #[arg(long, default_value_t = 3)]
        top: usize,
        /// Artifact written by `mine-top9`, for the image grids.
        #[arg(long)]
        top9: Option<PathBuf>,
    },
    /// Block sweeps, weight-magnitude and inhibition analyses, and plots.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated blocks, or `all`.
        #[arg(long, default_value = "all")]
        blocks: String,
        /// Image directory for the inhibition analysis.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Nine most center-activating corpus images for every channel of the
    /// Input and Block taps of the selected blocks.
    MineTop9 {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "all")]
        blocks: String,
        #[arg(long)]
        corpus: PathBuf,
        /// Images between checkpoint writes.
        #[arg(long, default_value_t = 64)]
        checkpoint_every: usize,
    },
    /// Plots from the sweep artifacts already in the output directory.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "all")]
        blocks: String,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Manifest path or export directory, or `synthetic[:SEED]`.
    #[arg(long)]
    pub weights: WeightsSource,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// FZ cache; defaults to $RESSTREAM_CACHE_DIR, then OUT/cache.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Continue from the checkpoints of an interrupted run.
    #[arg(long)]
    pub resume: bool,
    /// Optimisation steps per FZ.
    #[arg(long)]
    pub steps: Option<usize>,
    /// FZ side length in pixels.
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Jitter for every tap instead of the per-tap schedule.
    #[arg(long)]
    pub jitter: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Measure Output taps after the block ReLU.
    #[arg(long)]
    pub post_relu_output: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Input,
    Block,
    Output,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Input => Role::Input,
            RoleArg::Block => Role::Block,
            RoleArg::Output => Role::Output,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Center,
    Channel,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Center => Objective::Center,
            ObjectiveArg::Channel => Objective::Channel,
        }
    }
}

/// `all`, an empty selection, or a comma-separated block list.
pub fn parse_blocks(s: &str) -> Result<Vec<BlockRef>, String> {
    match s.trim() {
        "all" => Ok(studied_blocks().to_vec()),
        "" => Ok(Vec::new()),
        list => {
            let mut out = Vec::new();
            for part in list.split(',').map(str::trim) {
                let b: BlockRef = part.parse().map_err(|e| format!("block `{part}`: {e}"))?;
                if !out.contains(&b) {
                    out.push(b);
                }
            }
            Ok(out)
        }
    }
}
