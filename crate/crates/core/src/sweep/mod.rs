// SPDX-License-Identifier: MIT OR Apache-2.0

//! Network-scale sweeps: per-block mix and scale sweeps, weight magnitudes,
//! inhibition analysis, top-9 mining and validation-image checks.

mod analysis;
mod checkpoint;
mod corpus;

pub use analysis::{
    channel_magnitudes, inhibition_sweep, top_by_scale_metric, top_mixes, validation_sweep, weight_magnitude_sweep, ChannelCorrelation,
    CorrelationStatus, GroupComparison, InhibitionReport, MagnitudeReport, MagnitudeRow, ValidationOutcome,
};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use corpus::{corpus_activations, top9_mine, Corpus, CorpusEntry, PassOptions, Top9Set, Top9Tracker, TopEntry, TOP_K};

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest::fields_hash;
use crate::error::{Error, Result};
use crate::featviz::{jitter_for, FzCache, FzConfig, Objective, TapModel};
use crate::metrics::{channel_metrics, MixRecord, Probe, ScaleRecord, MAX_MIX};
use crate::resnet::{BlockRef, OutputMode, ResNet18, Tap};
use crate::stats::histogram;

/// Bin width of mix-ratio histograms over `[0, MAX_MIX]`.
pub const HISTOGRAM_STEP: f64 = 0.25;
/// Channels listed in the top-k sections of a report.
pub const REPORT_TOP_K: usize = 3;

/// Measurements of one successfully probed channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRecord {
    pub mix: MixRecord,
    pub scale: ScaleRecord,
    pub probe: Probe,
    pub input_fz_never_activated: bool,
    pub block_fz_never_activated: bool,
}

impl ChannelRecord {
    pub fn channel(&self) -> usize {
        self.mix.channel
    }
}

/// A channel excluded from a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlaggedChannel {
    pub channel: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ChannelOutcome {
    Measured(ChannelRecord),
    Flagged(FlaggedChannel),
}

/// Mix and scale results for every channel of a block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSweepReport {
    pub block: BlockRef,
    pub width: usize,
    pub records: Vec<ChannelRecord>,
    pub flagged: Vec<FlaggedChannel>,
    /// Counts of M over `[0, 5]` in steps of 0.25, top bin closed.
    pub histogram: Vec<u64>,
    /// Percent of measured channels meeting all three criteria.
    pub pass_pct_all: f64,
    /// Percent meeting the two rescaling criteria.
    pub pass_pct_without_mix: f64,
    pub top_by_sm: Vec<ScaleRecord>,
    pub top_mixes: Vec<MixRecord>,
    pub weights_hash: String,
    pub fz_config_hash: String,
    pub output_mode: OutputMode,
    pub reduced_config: bool,
}

/// Share of `records` passing all criteria and the rescaling criteria only.
pub fn pass_percentages(records: &[ScaleRecord]) -> (f64, f64) {
    if records.is_empty() {
        return (0.0, 0.0);
    }
    let pct = |n: usize| 100.0 * n as f64 / records.len() as f64;
    (
        pct(records.iter().filter(|r| r.is_scale_invariant()).count()),
        pct(records.iter().filter(|r| r.passes_without_mix()).count()),
    )
}

/// Histogram of mix ratios with the report binning.
pub fn mix_histogram(records: &[MixRecord]) -> Vec<u64> {
    let ms: Vec<f64> = records.iter().map(|r| r.m).collect();
    histogram(&ms, 0.0, MAX_MIX, HISTOGRAM_STEP).expect("constant range is valid")
}

impl BlockSweepReport {
    /// Assemble the summary sections from per-channel outcomes.
    pub fn from_outcomes(
        block: BlockRef,
        outcomes: Vec<ChannelOutcome>,
        weights_hash: &str,
        config: &FzConfig,
        output_mode: OutputMode,
    ) -> Self {
        let mut records = Vec::new();
        let mut flagged = Vec::new();
        for o in outcomes {
            match o {
                ChannelOutcome::Measured(r) => records.push(r),
                ChannelOutcome::Flagged(f) => flagged.push(f),
            }
        }
        records.sort_by_key(|r| r.channel());
        flagged.sort_by_key(|f| f.channel);
        let mixes: Vec<MixRecord> = records.iter().map(|r| r.mix).collect();
        let scales: Vec<ScaleRecord> = records.iter().map(|r| r.scale).collect();
        let (pass_pct_all, pass_pct_without_mix) = pass_percentages(&scales);
        Self {
            block,
            width: block.width(),
            histogram: mix_histogram(&mixes),
            pass_pct_all,
            pass_pct_without_mix,
            top_by_sm: top_by_scale_metric(&scales, REPORT_TOP_K),
            top_mixes: top_mixes(&mixes, REPORT_TOP_K),
            records,
            flagged,
            weights_hash: weights_hash.to_string(),
            fz_config_hash: config.config_hash(),
            output_mode,
            reduced_config: config.is_reduced(),
        }
    }

    pub fn mix_records(&self) -> Vec<MixRecord> {
        self.records.iter().map(|r| r.mix).collect()
    }

    pub fn scale_records(&self) -> Vec<ScaleRecord> {
        self.records.iter().map(|r| r.scale).collect()
    }

    pub fn record(&self, channel: usize) -> Option<&ChannelRecord> {
        self.records.iter().find(|r| r.channel() == channel)
    }

    /// Channels meeting all three criteria.
    pub fn invariant_channels(&self) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.scale.is_scale_invariant())
            .map(ChannelRecord::channel)
            .collect()
    }

    /// Channels meeting the criteria with the mix band omitted.
    pub fn invariant_channels_without_mix(&self) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.scale.passes_without_mix())
            .map(ChannelRecord::channel)
            .collect()
    }
}

/// Drives FZ-based sweeps over blocks through a shared cache.
#[derive(Debug, Clone)]
pub struct Sweeper<'a> {
    net: &'a ResNet18<f32>,
    cache: &'a FzCache,
    base: FzConfig,
    tap_jitter: bool,
    mode: OutputMode,
    checkpoint_dir: Option<PathBuf>,
    chunk: usize,
}

impl<'a> Sweeper<'a> {
    pub fn new(net: &'a ResNet18<f32>, cache: &'a FzCache, base: FzConfig) -> Self {
        Self {
            net,
            cache,
            base,
            tap_jitter: true,
            mode: OutputMode::PreRelu,
            checkpoint_dir: None,
            chunk: 16,
        }
    }

    /// Keep the base jitter for every tap instead of the per-tap schedule.
    pub fn with_fixed_jitter(mut self) -> Self {
        self.tap_jitter = false;
        self
    }

    pub fn with_output_mode(mut self, mode: OutputMode) -> Self {
        self.mode = mode;
        self
    }

    /// Write progress under `dir` and resume from it.
    pub fn with_checkpoints(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    /// Channels between checkpoint writes.
    pub fn with_chunk(mut self, chunk: usize) -> Self {
        self.chunk = chunk.max(1);
        self
    }

    pub fn net(&self) -> &ResNet18<f32> {
        self.net
    }

    pub fn base_config(&self) -> &FzConfig {
        &self.base
    }

    pub fn output_mode(&self) -> OutputMode {
        self.mode
    }

    /// FZ configuration used for `tap`.
    pub fn config_for(&self, tap: Tap) -> FzConfig {
        if self.tap_jitter {
            self.base.clone().with_jitter(jitter_for(tap))
        } else {
            self.base.clone()
        }
    }

    fn measure(&self, block: BlockRef, channel: usize) -> Result<ChannelRecord> {
        let fz = |tap: Tap| {
            let model = TapModel::new(self.net, tap)?;
            self.cache
                .get_or_compute(&model, channel, Objective::Center, &self.config_for(tap))
                .map(|(fz, _)| fz)
        };
        let fz_i = fz(Tap::input(block))?;
        let fz_b = fz(Tap::block(block))?;
        let (mix, scale, probe) = channel_metrics(self.net, block, channel, &fz_i, &fz_b, self.mode)?;
        Ok(ChannelRecord {
            mix,
            scale,
            probe,
            input_fz_never_activated: fz_i.meta.never_activated,
            block_fz_never_activated: fz_b.meta.never_activated,
        })
    }

    /// Measure `channels` of `block` in parallel. Per-channel failures are
    /// flagged; structural errors (bad block, I/O) abort.
    pub fn channel_outcomes(&self, block: BlockRef, channels: &[usize]) -> Result<Vec<ChannelOutcome>> {
        block.ensure_studied()?;
        if let Some(&c) = channels.iter().find(|&&c| c >= block.width()) {
            return Err(Error::SelectorOutOfRange(format!(
                "channel {c} of block {block} ({} channels)",
                block.width()
            )));
        }
        channels
            .par_iter()
            .map(|&c| match self.measure(block, c) {
                Ok(r) => Ok(ChannelOutcome::Measured(r)),
                Err(e @ (Error::Io { .. } | Error::Json(_))) => Err(e),
                Err(e) => {
                    log::warn!("block {block} channel {c} flagged: {e}");
                    Ok(ChannelOutcome::Flagged(FlaggedChannel {
                        channel: c,
                        reason: e.to_string(),
                    }))
                }
            })
            .collect()
    }

    fn run_key(&self, block: BlockRef) -> String {
        let parts = [
            self.net.weights_hash().to_string(),
            block.to_string(),
            format!("{:?}", self.mode),
            self.config_for(Tap::input(block)).config_hash(),
            self.config_for(Tap::block(block)).config_hash(),
        ];
        fields_hash(parts.iter().map(|s| s.as_bytes()))
    }

    /// Mix and scale measurements for every channel of `block`.
    pub fn block_sweep(&self, block: BlockRef) -> Result<BlockSweepReport> {
        block.ensure_studied()?;
        let width = block.width();
        let run_key = self.run_key(block);
        let stage = format!("block-sweep-{block}");
        let path = self
            .checkpoint_dir
            .as_ref()
            .map(|d| d.join(format!("sweep-{}.json", block.to_string().replace('.', "_"))));
        let mut outcomes: Vec<ChannelOutcome> = Vec::with_capacity(width);
        let mut next = 0;
        if let Some(p) = &path {
            if let Some((n, saved)) = load_checkpoint::<Vec<ChannelOutcome>>(p, &run_key, &stage)? {
                log::info!("resuming block {block} at channel {n}/{width}");
                next = n;
                outcomes = saved;
            }
        }
        while next < width {
            let end = (next + self.chunk).min(width);
            let channels: Vec<usize> = (next..end).collect();
            outcomes.extend(self.channel_outcomes(block, &channels)?);
            next = end;
            log::info!("block {block}: {next}/{width} channels");
            if let Some(p) = &path {
                save_checkpoint(p, &run_key, &stage, next, &outcomes)?;
            }
        }
        Ok(BlockSweepReport::from_outcomes(
            block,
            outcomes,
            self.net.weights_hash(),
            &self.base,
            self.mode,
        ))
    }

    /// Histogram and mix records of `block`.
    pub fn mix_sweep(&self, block: BlockRef) -> Result<BlockSweepReport> {
        self.block_sweep(block)
    }

    /// Criteria pass rates of `block`. Shares FZs and checkpoints with
    /// [`Sweeper::mix_sweep`].
    pub fn scale_sweep(&self, block: BlockRef) -> Result<BlockSweepReport> {
        self.block_sweep(block)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{mix_from_outputs, scale_from_probe};

    fn outcome(channel: usize, m_num: f64, up: f64, down: f64) -> ChannelOutcome {
        let block: BlockRef = "2.1".parse().unwrap();
        let mix = mix_from_outputs(block, channel, m_num, 1.0);
        let probe = Probe {
            o_of_xi: m_num,
            o_of_xb: 1.0,
            i_self: 1.0,
            b_self: 1.0,
            b_of_xi: 1.0,
            b_of_scaled_xi: 1.0 + up,
            i_of_xb: 1.0,
            i_of_scaled_xb: 1.0 + down,
        };
        ChannelOutcome::Measured(ChannelRecord {
            mix,
            scale: scale_from_probe(&mix, &probe),
            probe,
            input_fz_never_activated: false,
            block_fz_never_activated: false,
        })
    }

    #[test]
    fn report_summaries() {
        let outcomes = vec![
            outcome(0, 1.0, 0.5, 0.5),
            outcome(1, 3.0, 0.5, 0.5),
            outcome(2, 0.1, -0.5, 0.5),
            ChannelOutcome::Flagged(FlaggedChannel {
                channel: 3,
                reason: "x".into(),
            }),
        ];
        let r = BlockSweepReport::from_outcomes(
            "2.1".parse().unwrap(),
            outcomes,
            "w",
            &FzConfig::default(),
            OutputMode::PreRelu,
        );
        assert_eq!(r.histogram.len(), 20);
        assert_eq!(r.histogram.iter().sum::<u64>(), 3);
        assert_eq!(r.histogram[0], 1);
        assert_eq!(r.histogram[4], 1);
        assert_eq!(r.histogram[12], 1);
        assert_eq!(r.invariant_channels(), vec![0]);
        assert_eq!(r.invariant_channels_without_mix(), vec![0, 1]);
        assert!((r.pass_pct_all - 100.0 / 3.0).abs() < 1e-12);
        assert!((r.pass_pct_without_mix - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.flagged.len(), 1);
        assert!(!r.reduced_config);
    }

    #[test]
    fn empty_records_give_zero_percent() {
        assert_eq!(pass_percentages(&[]), (0.0, 0.0));
    }
}
