// SPDX-License-Identifier: MIT OR Apache-2.0

//! ResNet18 inference graph with I/B/O taps.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::arch::{BlockKind, BlockRef, Role, Tap};
use super::weights::WeightStore;
use crate::config::BN_EPS;
use crate::error::{Error, Result};
use crate::tensor::{BnAffine, Scalar, Tape, Tensor, Var};

/// Which value an Output tap reports to measurements.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMode {
    /// Stream sum before the block's ReLU.
    #[default]
    PreRelu,
    /// ReLU of the stream sum (sensitivity check).
    PostRelu,
}

#[derive(Debug)]
struct ConvBn<T: Scalar> {
    weight: Arc<Tensor<T>>,
    stride: usize,
    pad: usize,
    bn: Arc<BnAffine<T>>,
}

impl<T: Scalar> ConvBn<T> {
    fn load(ws: &WeightStore, conv: &str, bn: &str, stride: usize, pad: usize) -> Result<Self> {
        let weight = Arc::new(ws.get(&format!("{conv}.weight"))?.cast::<T>());
        let p = |s: &str| -> Result<Vec<T>> {
            Ok(ws.get(&format!("{bn}.{s}"))?.cast::<T>().into_data())
        };
        let eps = T::from_f32(BN_EPS).unwrap();
        let bn = BnAffine::new(&p("weight")?, &p("bias")?, &p("running_mean")?, &p("running_var")?, eps)
            .map_err(|e| match e {
                Error::CorruptWeights(m) => Error::CorruptWeights(format!("{bn}: {m}")),
                other => other,
            })?;
        Ok(Self {
            weight,
            stride,
            pad,
            bn: Arc::new(bn),
        })
    }

    fn apply(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let y = tape.conv2d(x, &self.weight, None, self.stride, self.pad)?;
        tape.affine(y, &self.bn)
    }
}

#[derive(Debug)]
struct BasicBlock<T: Scalar> {
    conv1: ConvBn<T>,
    conv2: ConvBn<T>,
    downsample: Option<ConvBn<T>>,
}

/// Values recorded for one block.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    /// Addend entering the stream sum (I).
    pub input: Var,
    /// Second batch-norm output (B).
    pub block: Var,
    /// Stream sum before ReLU (O).
    pub sum: Var,
    /// ReLU of the sum, fed to the next block.
    pub out: Var,
}

/// Handles into a tape for one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub image: Var,
    pub blocks: Vec<BlockVars>,
    pub logits: Option<Var>,
}

impl Trace {
    fn vars(&self, block: BlockRef) -> Result<&BlockVars> {
        self.blocks.get(block.ordinal()).ok_or_else(|| {
            Error::invalid("trace", format!("forward stopped before block {block}"))
        })
    }

    /// The tap value used by every measurement.
    pub fn tap(&self, tap: Tap) -> Result<Var> {
        tap.block.ensure_studied()?;
        let v = self.vars(tap.block)?;
        Ok(match tap.role {
            Role::Input => v.input,
            Role::Block => v.block,
            Role::Output => v.sum,
        })
    }

    /// The value a feature visualization ascends for `tap`. It equals the tap
    /// except for Input taps of simple blocks, whose addend is the previous
    /// block's ReLU output: there the optimiser climbs the previous block's
    /// pre-ReLU sum so that negative starts still receive gradient.
    pub fn objective(&self, tap: Tap) -> Result<Var> {
        tap.block.ensure_studied()?;
        if tap.role == Role::Input && tap.block.kind() == BlockKind::Simple {
            let prev = tap.block.previous().expect("studied simple blocks have a predecessor");
            return Ok(self.vars(prev)?.sum);
        }
        self.tap(tap)
    }
}

/// ResNet18 in inference mode, weights frozen.
#[derive(Debug)]
pub struct ResNet18<T: Scalar = f32> {
    stem: ConvBn<T>,
    blocks: Vec<BasicBlock<T>>,
    fc_weight: Arc<Tensor<T>>,
    fc_bias: Vec<T>,
    weights_hash: String,
}

/// Tap activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationMap<T: Scalar = f32> {
    pub taps: BTreeMap<Tap, Tensor<T>>,
}

impl<T: Scalar> ActivationMap<T> {
    pub fn get(&self, tap: Tap) -> Result<&Tensor<T>> {
        self.taps
            .get(&tap)
            .ok_or_else(|| Error::invalid("activation map", format!("tap {tap} was not recorded")))
    }

    /// Center-neuron activation of `channel` at `tap`.
    pub fn center(&self, tap: Tap, channel: usize) -> Result<T> {
        center_activation(self.get(tap)?, channel)
    }

    /// Center activation with the Output-mode convention applied.
    pub fn center_with(&self, tap: Tap, channel: usize, mode: OutputMode) -> Result<T> {
        let v = self.center(tap, channel)?;
        Ok(match (tap.role, mode) {
            (Role::Output, OutputMode::PostRelu) => v.max(T::zero()),
            _ => v,
        })
    }
}

/// Spatial index of the center neuron: `(floor(H/2), floor(W/2))`.
pub fn center_index(h: usize, w: usize) -> (usize, usize) {
    (h / 2, w / 2)
}

/// Activation at the center of `channel` in a `1×C×H×W` map.
pub fn center_activation<T: Scalar>(map: &Tensor<T>, channel: usize) -> Result<T> {
    let [_, c, h, w] = map.dims4("center_activation")?;
    if channel >= c {
        return Err(Error::SelectorOutOfRange(format!(
            "channel {channel} of a {c}-channel map"
        )));
    }
    let (y, x) = center_index(h, w);
    Ok(map.data()[(channel * h + y) * w + x])
}

impl<T: Scalar> ResNet18<T> {
    pub fn new(ws: &WeightStore) -> Result<Self> {
        let stem = ConvBn::load(ws, "conv1", "bn1", 2, 3)?;
        let mut blocks = Vec::with_capacity(8);
        for ordinal in 0..8 {
            let b = BlockRef::from_ordinal(ordinal);
            let p = b.prefix();
            let stride = if b.is_downsample() { 2 } else { 1 };
            let downsample = if b.is_downsample() {
                Some(ConvBn::load(ws, &format!("{p}.downsample.0"), &format!("{p}.downsample.1"), 2, 0)?)
            } else {
                None
            };
            blocks.push(BasicBlock {
                conv1: ConvBn::load(ws, &format!("{p}.conv1"), &format!("{p}.bn1"), stride, 1)?,
                conv2: ConvBn::load(ws, &format!("{p}.conv2"), &format!("{p}.bn2"), 1, 1)?,
                downsample,
            });
        }
        Ok(Self {
            stem,
            blocks,
            fc_weight: Arc::new(ws.get("fc.weight")?.cast()),
            fc_bias: ws.get("fc.bias")?.cast::<T>().into_data(),
            weights_hash: ws.hash().to_string(),
        })
    }

    pub fn weights_hash(&self) -> &str {
        &self.weights_hash
    }

    /// Record the network on `tape` from an already-normalised image.
    /// Stops after block `until` when given; otherwise runs through the
    /// classifier.
    pub fn trace(&self, tape: &mut Tape<T>, image: Var, until: Option<BlockRef>) -> Result<Trace> {
        let [n, c, _, _] = tape.value(image).dims4("resnet18")?;
        if n != 1 || c != 3 {
            return Err(Error::invalid(
                "resnet18",
                format!("expected a 1×3×H×W image, got {:?}", tape.value(image).shape()),
            ));
        }
        let x = self.stem.apply(tape, image)?;
        let x = tape.relu(x);
        let mut x = tape.maxpool2d(x, 3, 2, 1)?;
        let last = until.map_or(7, BlockRef::ordinal);
        let mut vars = Vec::with_capacity(last + 1);
        for block in &self.blocks[..=last] {
            let h = block.conv1.apply(tape, x)?;
            let h = tape.relu(h);
            let b = block.conv2.apply(tape, h)?;
            let i = match &block.downsample {
                Some(ds) => ds.apply(tape, x)?,
                None => x,
            };
            let sum = tape.add(i, b)?;
            let out = tape.relu(sum);
            vars.push(BlockVars {
                input: i,
                block: b,
                sum,
                out,
            });
            x = out;
        }
        let logits = if until.is_none() {
            let pooled = tape.global_avg_pool(x)?;
            Some(tape.linear(pooled, &self.fc_weight, Some(&self.fc_bias))?)
        } else {
            None
        };
        Ok(Trace {
            image,
            blocks: vars,
            logits,
        })
    }

    /// Forward a normalised `1×3×H×W` image and collect `taps`. The tape is
    /// returned when `with_tape` is set so callers can run backward.
    pub fn forward(
        &self,
        image: &Tensor<T>,
        taps: &[Tap],
        with_tape: bool,
    ) -> Result<(ActivationMap<T>, Option<(Tape<T>, Trace)>)> {
        for t in taps {
            t.block.ensure_studied()?;
        }
        let until = taps.iter().map(|t| t.block).max();
        let mut tape = Tape::new();
        let x = tape.leaf(image.clone());
        let trace = self.trace(&mut tape, x, until)?;
        let mut map = BTreeMap::new();
        for &t in taps {
            map.insert(t, tape.value(trace.tap(t)?).clone());
        }
        let acts = ActivationMap { taps: map };
        Ok((acts, with_tape.then_some((tape, trace))))
    }

    /// Convenience: tap activations without a tape.
    pub fn activations(&self, image: &Tensor<T>, taps: &[Tap]) -> Result<ActivationMap<T>> {
        Ok(self.forward(image, taps, false)?.0)
    }

    /// The objective tensor of `tap` on `image` (see [`Trace::objective`]).
    pub fn objective_map(&self, image: &Tensor<T>, tap: Tap) -> Result<Tensor<T>> {
        tap.block.ensure_studied()?;
        let mut tape = Tape::new();
        let x = tape.leaf(image.clone());
        let trace = self.trace(&mut tape, x, Some(tap.block))?;
        Ok(tape.value(trace.objective(tap)?).clone())
    }

    /// Class logits `[1, 1000]`.
    pub fn logits(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.leaf(image.clone());
        let trace = self.trace(&mut tape, x, None)?;
        Ok(tape.value(trace.logits.expect("full trace")).clone())
    }
}
