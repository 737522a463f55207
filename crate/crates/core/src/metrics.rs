// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-channel stream quantities: mix ratio, the S / S⁻¹ rescaling
//! transforms, the three scale-invariance criteria and the scale metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featviz::{FzResult, Objective};
use crate::resnet::{BlockRef, OutputMode, ResNet18, Tap};
use crate::tensor::{bilinear_resize, center_crop, reflection_pad, ResizeMode, Scalar, Tensor};

/// Upper clamp of the mix ratio.
pub const MAX_MIX: f64 = 5.0;
/// Open interval of mix ratios that count as a mix.
pub const MIX_BAND: (f64, f64) = (2.0 / 3.0, 3.0 / 2.0);
/// Batch size of the validation-image variant.
pub const VALIDATION_BATCH: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampReason {
    None,
    MaxClamp,
    NonpositiveDenominator,
    /// Input FZ drives the output negative while the block FZ drives it
    /// positive; M is set to 0.
    NonpositiveNumerator,
}

impl ClampReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ClampReason::None => "none",
            ClampReason::MaxClamp => "max_clamp",
            ClampReason::NonpositiveDenominator => "nonpositive_denominator",
            ClampReason::NonpositiveNumerator => "nonpositive_numerator",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixRecord {
    pub block: BlockRef,
    pub channel: usize,
    /// Output activation for the Input-tap FZ.
    pub o_of_xi: f64,
    /// Output activation for the Block-tap FZ.
    pub o_of_xb: f64,
    #[serde(rename = "M")]
    pub m: f64,
    pub clamp_reason: ClampReason,
}

impl MixRecord {
    /// Skip-like (strictly above 1).
    pub fn is_skip(&self) -> bool {
        self.m > 1.0
    }

    /// Overwrite-like (strictly below 1).
    pub fn is_overwrite(&self) -> bool {
        self.m < 1.0
    }
}

/// `M = o_of_xi / o_of_xb` with the clamping rules.
pub fn mix_from_outputs(block: BlockRef, channel: usize, o_of_xi: f64, o_of_xb: f64) -> MixRecord {
    let (m, clamp_reason) = if !(o_of_xb > 0.0) {
        (MAX_MIX, ClampReason::NonpositiveDenominator)
    } else if !(o_of_xi > 0.0) {
        (0.0, ClampReason::NonpositiveNumerator)
    } else {
        let m = o_of_xi / o_of_xb;
        if m > MAX_MIX {
            (MAX_MIX, ClampReason::MaxClamp)
        } else {
            (m, ClampReason::None)
        }
    };
    MixRecord {
        block,
        channel,
        o_of_xi,
        o_of_xb,
        m,
        clamp_reason,
    }
}

fn square_side<T: Scalar>(img: &Tensor<T>, op: &'static str) -> Result<usize> {
    let [_, _, h, w] = img.dims4(op)?;
    if h != w || h % 4 != 0 || h < 8 {
        return Err(Error::invalid(
            op,
            format!("expected a square image with side divisible by 4, got {h}×{w}"),
        ));
    }
    Ok(h)
}

/// `S`: center crop to half the side, bilinear resize back up.
pub fn scale_up<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let n = square_side(img, "scale_up")?;
    bilinear_resize(&center_crop(img, n / 2)?, n, n, ResizeMode::HalfPixel)
}

/// `S⁻¹`: bilinear resize to half the side, reflection pad back out.
pub fn scale_down<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let n = square_side(img, "scale_down")?;
    reflection_pad(&bilinear_resize(img, n / 2, n / 2, ResizeMode::HalfPixel)?, n / 4)
}

/// Activations feeding the mix ratio and the scale criteria of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub o_of_xi: f64,
    pub o_of_xb: f64,
    /// `I_c(X_I)`.
    pub i_self: f64,
    /// `B_c(X_B)`.
    pub b_self: f64,
    pub b_of_xi: f64,
    pub b_of_scaled_xi: f64,
    pub i_of_xb: f64,
    pub i_of_scaled_xb: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub block: BlockRef,
    pub channel: usize,
    pub passes_mix: bool,
    pub passes_up: bool,
    pub passes_down: bool,
    /// `B_c(S(X_I)) − relu(B_c(X_I))`.
    pub delta_up: f64,
    /// `I_c(S⁻¹(X_B)) − relu(I_c(X_B))`.
    pub delta_down: f64,
    /// `None` when a self-activation is not positive (excluded from ranking).
    #[serde(rename = "SM")]
    pub sm: Option<f64>,
}

impl ScaleRecord {
    pub fn is_scale_invariant(&self) -> bool {
        self.passes_mix && self.passes_up && self.passes_down
    }

    /// All criteria except the mix band.
    pub fn passes_without_mix(&self) -> bool {
        self.passes_up && self.passes_down
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// `delta_up / b_self + delta_down / i_self`, or `None` if either
/// self-activation is not positive.
pub fn scale_metric(delta_up: f64, delta_down: f64, i_self: f64, b_self: f64) -> Option<f64> {
    (i_self > 0.0 && b_self > 0.0).then(|| delta_up / b_self + delta_down / i_self)
}

/// Apply the criteria to measured activations.
pub fn scale_from_probe(mix: &MixRecord, probe: &Probe) -> ScaleRecord {
    let delta_up = probe.b_of_scaled_xi - relu(probe.b_of_xi);
    let delta_down = probe.i_of_scaled_xb - relu(probe.i_of_xb);
    ScaleRecord {
        block: mix.block,
        channel: mix.channel,
        passes_mix: MIX_BAND.0 < mix.m && mix.m < MIX_BAND.1,
        passes_up: relu(probe.b_of_xi) < probe.b_of_scaled_xi,
        passes_down: relu(probe.i_of_xb) < probe.i_of_scaled_xb,
        delta_up,
        delta_down,
        sm: scale_metric(delta_up, delta_down, probe.i_self, probe.b_self),
    }
}

/// Mean center activations of `channel` at the three taps over `images`.
fn mean_taps(
    net: &ResNet18<f32>,
    block: BlockRef,
    channel: usize,
    images: &[Tensor<f32>],
    mode: OutputMode,
) -> Result<[f64; 3]> {
    let taps = [Tap::input(block), Tap::block(block), Tap::output(block)];
    let mut acc = [0f64; 3];
    for img in images {
        let acts = net.activations(img, &taps)?;
        for (a, t) in acc.iter_mut().zip(taps) {
            *a += f64::from(acts.center_with(t, channel, mode)?);
        }
    }
    Ok(acc.map(|v| v / images.len() as f64))
}

/// Probe from two sets of normalised stimuli. Each set is averaged, and the
/// rescaled evaluations transform every image before averaging.
pub fn probe_stimuli(
    net: &ResNet18<f32>,
    block: BlockRef,
    channel: usize,
    stim_i: &[Tensor<f32>],
    stim_b: &[Tensor<f32>],
    mode: OutputMode,
) -> Result<Probe> {
    block.ensure_studied()?;
    if channel >= block.width() {
        return Err(Error::SelectorOutOfRange(format!(
            "channel {channel} of block {block} ({} channels)",
            block.width()
        )));
    }
    if stim_i.is_empty() || stim_b.is_empty() {
        return Err(Error::invalid("probe", "no stimuli".to_string()));
    }
    let [i_self, b_of_xi, o_of_xi] = mean_taps(net, block, channel, stim_i, mode)?;
    let [i_of_xb, b_self, o_of_xb] = mean_taps(net, block, channel, stim_b, mode)?;
    let up: Vec<_> = stim_i.iter().map(scale_up).collect::<Result<_>>()?;
    let down: Vec<_> = stim_b.iter().map(scale_down).collect::<Result<_>>()?;
    let [_, b_of_scaled_xi, _] = mean_taps(net, block, channel, &up, mode)?;
    let [i_of_scaled_xb, _, _] = mean_taps(net, block, channel, &down, mode)?;
    Ok(Probe {
        o_of_xi,
        o_of_xb,
        i_self,
        b_self,
        b_of_xi,
        b_of_scaled_xi,
        i_of_xb,
        i_of_scaled_xb,
    })
}

fn check_fz(fz: &FzResult, expected: Tap, channel: usize) -> Result<()> {
    let tap = fz.tap()?;
    if tap != expected || fz.channel() != channel || fz.objective() != Objective::Center {
        return Err(Error::invalid(
            "stream metrics",
            format!(
                "expected the center FZ of {expected} channel {channel}, got {} FZ of {tap} channel {}",
                fz.objective(),
                fz.channel()
            ),
        ));
    }
    Ok(())
}

/// Probe with the center FZs of the block's Input and Block taps.
pub fn probe_fz(
    net: &ResNet18<f32>,
    block: BlockRef,
    channel: usize,
    fz_i: &FzResult,
    fz_b: &FzResult,
    mode: OutputMode,
) -> Result<Probe> {
    check_fz(fz_i, Tap::input(block), channel)?;
    check_fz(fz_b, Tap::block(block), channel)?;
    probe_stimuli(net, block, channel, &[fz_i.normalized()?], &[fz_b.normalized()?], mode)
}

pub fn mix_ratio(
    net: &ResNet18<f32>,
    block: BlockRef,
    channel: usize,
    fz_i: &FzResult,
    fz_b: &FzResult,
    mode: OutputMode,
) -> Result<MixRecord> {
    let p = probe_fz(net, block, channel, fz_i, fz_b, mode)?;
    Ok(mix_from_outputs(block, channel, p.o_of_xi, p.o_of_xb))
}

pub fn scale_criteria(
    net: &ResNet18<f32>,
    block: BlockRef,
    channel: usize,
    fz_i: &FzResult,
    fz_b: &FzResult,
    mix: &MixRecord,
) -> Result<ScaleRecord> {
    let p = probe_fz(net, block, channel, fz_i, fz_b, OutputMode::PreRelu)?;
    Ok(scale_from_probe(mix, &p))
}

/// Mix record, scale record and the underlying probe in one pass.
pub fn channel_metrics(
    net: &ResNet18<f32>,
    block: BlockRef,
    channel: usize,
    fz_i: &FzResult,
    fz_b: &FzResult,
    mode: OutputMode,
) -> Result<(MixRecord, ScaleRecord, Probe)> {
    let p = probe_fz(net, block, channel, fz_i, fz_b, mode)?;
    let mix = mix_from_outputs(block, channel, p.o_of_xi, p.o_of_xb);
    Ok((mix, scale_from_probe(&mix, &p), p))
}

/// The criteria with FZs replaced by the top-9 natural images of each tap
/// (normalised), every activation being the batch mean.
pub fn validation_variant(
    net: &ResNet18<f32>,
    block: BlockRef,
    channel: usize,
    top9_i: &[Tensor<f32>],
    top9_b: &[Tensor<f32>],
    mode: OutputMode,
) -> Result<(MixRecord, ScaleRecord)> {
    for batch in [top9_i, top9_b] {
        if batch.len() < VALIDATION_BATCH {
            return Err(Error::NotEnoughImages {
                needed: VALIDATION_BATCH,
                got: batch.len(),
            });
        }
    }
    let p = probe_stimuli(
        net,
        block,
        channel,
        &top9_i[..VALIDATION_BATCH],
        &top9_b[..VALIDATION_BATCH],
        mode,
    )?;
    let mix = mix_from_outputs(block, channel, p.o_of_xi, p.o_of_xb);
    Ok((mix, scale_from_probe(&mix, &p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b() -> BlockRef {
        "1.1".parse().unwrap()
    }

    #[test]
    fn mix_examples() {
        let m = mix_from_outputs(b(), 0, 2.5, 2.5);
        assert_eq!((m.m, m.clamp_reason), (1.0, ClampReason::None));
        let m = mix_from_outputs(b(), 0, 10.0, 1.0);
        assert_eq!((m.m, m.clamp_reason), (5.0, ClampReason::MaxClamp));
        let m = mix_from_outputs(b(), 0, 1.0, -0.3);
        assert_eq!((m.m, m.clamp_reason), (5.0, ClampReason::NonpositiveDenominator));
        let m = mix_from_outputs(b(), 0, -1.0, 2.0);
        assert_eq!((m.m, m.clamp_reason), (0.0, ClampReason::NonpositiveNumerator));
    }

    #[test]
    fn scale_metric_examples() {
        assert_eq!(scale_metric(0.0, 0.0, 1.0, 1.0), Some(0.0));
        assert_eq!(scale_metric(1.0, 1.0, 2.0, 4.0), Some(0.75));
        assert_eq!(scale_metric(1.0, 1.0, 0.0, 4.0), None);
    }

    fn probe(b_of_xi: f64, b_of_scaled_xi: f64, i_of_xb: f64, i_of_scaled_xb: f64) -> Probe {
        Probe {
            o_of_xi: 1.0,
            o_of_xb: 1.0,
            i_self: 1.0,
            b_self: 1.0,
            b_of_xi,
            b_of_scaled_xi,
            i_of_xb,
            i_of_scaled_xb,
        }
    }

    #[test]
    fn criteria_examples() {
        let mix = mix_from_outputs(b(), 3, 1.0, 1.0);
        let r = scale_from_probe(&mix, &probe(0.5, 1.0, 0.2, 0.4));
        assert!(r.is_scale_invariant());
        // A negative activation brought closer to zero but not above it fails.
        let r = scale_from_probe(&mix, &probe(-2.0, -1.0, 0.2, 0.4));
        assert!(!r.passes_up);
        assert_eq!(r.delta_up, -1.0);
        let r = scale_from_probe(&mix, &probe(0.5, 0.5, 0.2, 0.2));
        assert!(!r.passes_up && !r.passes_down);
    }

    #[test]
    fn transforms_fix_constants_and_keep_size() {
        let img = Tensor::<f64>::full(&[1, 3, 16, 16], 0.7);
        for out in [scale_up(&img).unwrap(), scale_down(&img).unwrap()] {
            assert_eq!(out.shape(), img.shape());
            assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
        }
        assert!(scale_up(&Tensor::<f64>::zeros(&[1, 3, 16, 12])).is_err());
        assert!(scale_down(&Tensor::<f64>::zeros(&[1, 3, 18, 18])).is_err());
    }
}
