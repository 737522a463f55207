// SPDX-License-Identifier: MIT OR Apache-2.0

//! Analyses layered on block sweeps: rankings, weight magnitudes,
//! inhibition and the validation-image variant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{corpus_activations, Corpus, Top9Set};
use super::{BlockSweepReport, FlaggedChannel};
use crate::error::{Error, Result};
use crate::metrics::{validation_variant, MixRecord, ScaleRecord};
use crate::resnet::{BlockRef, OutputMode, ResNet18, Tap, WeightStore};
use crate::stats::{anova_f, spearman, AnovaResult, CorrelationResult};

/// Size of the reference validation corpus; smaller corpora are labelled.
pub const FULL_CORPUS_SIZE: usize = 50_000;
/// Fewest positive images for a per-channel correlation.
pub const MIN_CORRELATION_IMAGES: usize = 3;

/// The `k` records with M closest to 1, ties by channel.
pub fn top_mixes(records: &[MixRecord], k: usize) -> Vec<MixRecord> {
    let mut v = records.to_vec();
    v.sort_by(|a, b| {
        (a.m - 1.0)
            .abs()
            .total_cmp(&(b.m - 1.0).abs())
            .then(a.channel.cmp(&b.channel))
    });
    v.truncate(k);
    v
}

/// The `k` records with the largest defined scale metric, ties by channel.
pub fn top_by_scale_metric(records: &[ScaleRecord], k: usize) -> Vec<ScaleRecord> {
    let mut v: Vec<ScaleRecord> = records.iter().filter(|r| r.sm.is_some()).copied().collect();
    v.sort_by(|a, b| b.sm.unwrap().total_cmp(&a.sm.unwrap()).then(a.channel.cmp(&b.channel)));
    v.truncate(k);
    v
}

/// A quantity split into skip (M > 1) and overwrite (M < 1) channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub skip_n: usize,
    pub overwrite_n: usize,
    pub skip_mean: Option<f64>,
    pub overwrite_mean: Option<f64>,
    /// `None` unless both groups have two or more members.
    pub anova: Option<AnovaResult>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl GroupComparison {
    /// Group `(m, value)` pairs; M = 1 joins neither group.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut skip = Vec::new();
        let mut over = Vec::new();
        for (m, v) in pairs {
            if m > 1.0 {
                skip.push(v);
            } else if m < 1.0 {
                over.push(v);
            }
        }
        Self {
            skip_n: skip.len(),
            overwrite_n: over.len(),
            skip_mean: mean(&skip),
            overwrite_mean: mean(&over),
            anova: anova_f(&skip, &over).ok(),
        }
    }
}

fn refuse_magnitudes(block: BlockRef) -> Result<()> {
    block.ensure_studied()?;
    if block.is_downsample() || block == BlockRef::new(4, 1)? {
        return Err(Error::Unsupported(format!(
            "weight magnitudes of block {block}: only simple blocks 1.1, 2.1 and 3.1 are analysed \
             (downsample blocks mix a projected input, and 4.1 has nearly all channels in the lowest bin)"
        )));
    }
    Ok(())
}

/// `(|bn2 gamma_c|, mean |conv2 w_c|)` for every output channel of `block`.
pub fn channel_magnitudes(ws: &WeightStore, block: BlockRef) -> Result<Vec<(f64, f64)>> {
    let prefix = block.prefix();
    let gamma = ws.get(&format!("{prefix}.bn2.weight"))?;
    let conv = ws.get(&format!("{prefix}.conv2.weight"))?;
    let per = conv.len() / conv.shape()[0];
    Ok(gamma
        .data()
        .iter()
        .zip(conv.data().chunks_exact(per))
        .map(|(g, w)| {
            let m = w.iter().map(|v| f64::from(v.abs())).sum::<f64>() / per as f64;
            (f64::from(g.abs()), m)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeRow {
    pub channel: usize,
    #[serde(rename = "M")]
    pub m: f64,
    pub bn2_gamma_abs: f64,
    pub conv2_mean_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeReport {
    pub block: BlockRef,
    pub rows: Vec<MagnitudeRow>,
    pub bn2_vs_m: CorrelationResult,
    pub conv2_vs_m: CorrelationResult,
    pub weights_hash: String,
}

/// Second-layer weight magnitudes of the measured channels against M.
pub fn weight_magnitude_sweep(ws: &WeightStore, report: &BlockSweepReport) -> Result<MagnitudeReport> {
    refuse_magnitudes(report.block)?;
    if ws.hash() != report.weights_hash {
        return Err(Error::invalid("weight magnitudes", "sweep belongs to different weights"));
    }
    let mags = channel_magnitudes(ws, report.block)?;
    let rows: Vec<MagnitudeRow> = report
        .records
        .iter()
        .map(|r| {
            let (g, w) = mags[r.channel()];
            MagnitudeRow {
                channel: r.channel(),
                m: r.mix.m,
                bn2_gamma_abs: g,
                conv2_mean_abs: w,
            }
        })
        .collect();
    let ms: Vec<f64> = rows.iter().map(|r| r.m).collect();
    let g: Vec<f64> = rows.iter().map(|r| r.bn2_gamma_abs).collect();
    let w: Vec<f64> = rows.iter().map(|r| r.conv2_mean_abs).collect();
    Ok(MagnitudeReport {
        block: report.block,
        bn2_vs_m: spearman(&ms, &g)?,
        conv2_vs_m: spearman(&ms, &w)?,
        rows,
        weights_hash: report.weights_hash.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationStatus {
    Defined,
    /// No corpus image drives the Input tap positive; excluded.
    NoPositiveImages,
    /// Too few positive images or constant activations.
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelCorrelation {
    pub channel: usize,
    #[serde(rename = "M")]
    pub m: f64,
    /// `B_c` of the channel's Input-tap FZ.
    pub b_of_xi: f64,
    pub n_positive: usize,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub status: CorrelationStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InhibitionReport {
    pub block: BlockRef,
    pub channels: Vec<ChannelCorrelation>,
    /// `B_c(X̂_I)` by group.
    pub activations: GroupComparison,
    /// Per-channel B-vs-I correlations by group.
    pub correlations: GroupComparison,
    pub corpus_hash: String,
    pub corpus_size: usize,
    pub images_used: usize,
    /// Corpus smaller than the full validation set.
    pub reduced_corpus: bool,
    pub weights_hash: String,
}

/// Block activations of Input FZs and, over `corpus`, the per-channel rank
/// correlation of B with I on images that activate I.
pub fn inhibition_sweep(net: &ResNet18<f32>, report: &BlockSweepReport, corpus: &Corpus) -> Result<InhibitionReport> {
    let block = report.block;
    if net.weights_hash() != report.weights_hash {
        return Err(Error::invalid("inhibition", "sweep belongs to different weights"));
    }
    let taps = [Tap::input(block), Tap::block(block)];
    let (ids, rows) = corpus_activations(net, &taps, corpus)?;
    let channels: Vec<ChannelCorrelation> = report
        .records
        .iter()
        .map(|r| {
            let c = r.channel();
            let (i, b): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|row| row[0][c] > 0.0)
                .map(|row| (f64::from(row[0][c]), f64::from(row[1][c])))
                .unzip();
            let n = i.len();
            let corr = if n >= MIN_CORRELATION_IMAGES {
                spearman(&i, &b).ok()
            } else {
                None
            };
            let status = match (n, corr.and_then(|c| c.rho)) {
                (0, _) => {
                    log::info!("block {block} channel {c}: no positively activating images");
                    CorrelationStatus::NoPositiveImages
                }
                (_, Some(_)) => CorrelationStatus::Defined,
                (_, None) => CorrelationStatus::Undefined,
            };
            ChannelCorrelation {
                channel: c,
                m: r.mix.m,
                b_of_xi: r.probe.b_of_xi,
                n_positive: n,
                rho: corr.and_then(|c| c.rho),
                p_value: corr.and_then(|c| c.p_value),
                status,
            }
        })
        .collect();
    let activations = GroupComparison::from_pairs(channels.iter().map(|c| (c.m, c.b_of_xi)));
    let correlations = GroupComparison::from_pairs(channels.iter().filter_map(|c| c.rho.map(|rho| (c.m, rho))));
    Ok(InhibitionReport {
        block,
        channels,
        activations,
        correlations,
        corpus_hash: corpus.manifest_hash.clone(),
        corpus_size: corpus.len(),
        images_used: ids.len(),
        reduced_corpus: corpus.len() < FULL_CORPUS_SIZE,
        weights_hash: report.weights_hash.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ValidationOutcome {
    Measured { mix: MixRecord, scale: ScaleRecord },
    Flagged(FlaggedChannel),
}

/// The criteria of `channels` with each tap's top-9 corpus images in place
/// of its FZ.
pub fn validation_sweep(
    net: &ResNet18<f32>,
    block: BlockRef,
    channels: &[usize],
    top9: &Top9Set,
    corpus: &Corpus,
    mode: OutputMode,
) -> Result<Vec<ValidationOutcome>> {
    block.ensure_studied()?;
    if top9.corpus_hash != corpus.manifest_hash || top9.weights_hash != net.weights_hash() {
        return Err(Error::invalid(
            "validation sweep",
            "top-9 set was mined with other weights or another corpus",
        ));
    }
    let (ti, tb) = (Tap::input(block), Tap::block(block));
    if !top9.trackers.contains_key(&ti) || !top9.trackers.contains_key(&tb) {
        return Err(Error::invalid("validation sweep", format!("top-9 set lacks taps {ti} and {tb}")));
    }
    let load = |tap: Tap, c: usize| -> Result<Vec<_>> {
        let ids = top9.get(tap, c).map(|t| t.image_ids()).unwrap_or_default();
        ids.into_iter().map(|id| corpus.load(id)).collect()
    };
    channels
        .par_iter()
        .map(|&c| {
            if c >= block.width() {
                return Err(Error::SelectorOutOfRange(format!("channel {c} of block {block}")));
            }
            let run = || validation_variant(net, block, c, &load(ti, c)?, &load(tb, c)?, mode);
            Ok(match run() {
                Ok((mix, scale)) => ValidationOutcome::Measured { mix, scale },
                Err(e) => {
                    log::warn!("validation of block {block} channel {c} flagged: {e}");
                    ValidationOutcome::Flagged(FlaggedChannel {
                        channel: c,
                        reason: e.to_string(),
                    })
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mix_from_outputs;

    fn mixes(ms: &[f64]) -> Vec<MixRecord> {
        let b: BlockRef = "1.1".parse().unwrap();
        ms.iter().enumerate().map(|(c, &m)| mix_from_outputs(b, c, m, 1.0)).collect()
    }

    #[test]
    fn top_mixes_orders_by_distance_to_one() {
        let top = top_mixes(&mixes(&[0.5, 1.05, 2.0]), 3);
        assert_eq!(top.iter().map(|r| r.channel).collect::<Vec<_>>(), vec![1, 0, 2]);
        let top = top_mixes(&mixes(&[9.0; 6]), 3);
        assert!(top.iter().all(|r| r.m == 5.0));
        assert_eq!(top.iter().map(|r| r.channel).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn groups_use_strict_inequalities() {
        let g = GroupComparison::from_pairs([(1.0, 7.0), (2.0, 1.0), (3.0, 3.0), (0.5, 0.0)]);
        assert_eq!((g.skip_n, g.overwrite_n), (2, 1));
        assert_eq!(g.skip_mean, Some(2.0));
        assert_eq!(g.overwrite_mean, Some(0.0));
        assert!(g.anova.is_none());
    }

    #[test]
    fn magnitudes_refuse_excluded_blocks() {
        for b in ["2.0", "3.0", "4.0", "4.1", "1.0"] {
            assert!(refuse_magnitudes(b.parse().unwrap()).is_err(), "{b}");
        }
        for b in ["1.1", "2.1", "3.1"] {
            assert!(refuse_magnitudes(b.parse().unwrap()).is_ok(), "{b}");
        }
    }
}
