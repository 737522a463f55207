// SPDX-License-Identifier: MIT OR Apache-2.0

//! Gradient ascent on the spectral parameters of an image.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::augment::Augmentation;
use super::config::FzConfig;
use super::spectral::Spectral;
use crate::config::{IMAGENET_MEAN, IMAGENET_STD};
use crate::digest::fields_digest;
use crate::error::{Error, Result};
use crate::resnet::{center_index, ResNet18, Tap};
use crate::tensor::{BnAffine, Scalar, Tape, Tensor, Var};

/// What the optimiser maximises in the target channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// The neuron at `(floor(h/2), floor(w/2))`.
    Center,
    /// The spatial mean of the channel.
    Channel,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Center => "center",
            Objective::Channel => "channel",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(Objective::Center),
            "channel" => Ok(Objective::Channel),
            other => Err(Error::invalid("objective", format!("unknown objective `{other}`"))),
        }
    }
}

/// A network head that maps a normalised image to a `1×C×h×w` map whose
/// channels are the visualisation targets.
pub trait FeatureModel<T: Scalar>: Sync {
    /// Identifier of the target layer; part of cache keys and RNG streams.
    fn target(&self) -> String;
    fn weights_hash(&self) -> &str;
    fn channels(&self) -> usize;
    fn objective(&self, tape: &mut Tape<T>, image: Var) -> Result<Var>;
}

/// A ResNet18 tap as an FZ target.
#[derive(Debug, Clone, Copy)]
pub struct TapModel<'a, T: Scalar = f32> {
    net: &'a ResNet18<T>,
    tap: Tap,
}

impl<'a, T: Scalar> TapModel<'a, T> {
    pub fn new(net: &'a ResNet18<T>, tap: Tap) -> Result<Self> {
        tap.block.ensure_studied()?;
        Ok(Self { net, tap })
    }

    pub fn tap(&self) -> Tap {
        self.tap
    }
}

impl<T: Scalar> FeatureModel<T> for TapModel<'_, T> {
    fn target(&self) -> String {
        self.tap.to_string()
    }

    fn weights_hash(&self) -> &str {
        self.net.weights_hash()
    }

    fn channels(&self) -> usize {
        self.tap.channels()
    }

    fn objective(&self, tape: &mut Tape<T>, image: Var) -> Result<Var> {
        let trace = self.net.trace(tape, image, Some(self.tap.block))?;
        trace.objective(self.tap)
    }
}

/// The objective scalar of `channel` and its gradient seed.
pub fn select<T: Scalar>(map: &Tensor<T>, channel: usize, objective: Objective) -> Result<(T, Tensor<T>)> {
    let [_, c, h, w] = map.dims4("objective")?;
    if channel >= c {
        return Err(Error::SelectorOutOfRange(format!("channel {channel} of a {c}-channel map")));
    }
    let mut seed = Tensor::zeros(map.shape());
    let plane = channel * h * w;
    let value = match objective {
        Objective::Center => {
            let (y, x) = center_index(h, w);
            seed.data_mut()[plane + y * w + x] = T::one();
            map.data()[plane + y * w + x]
        }
        Objective::Channel => {
            let n = T::from_usize(h * w).unwrap();
            let inv = T::one() / n;
            for v in &mut seed.data_mut()[plane..plane + h * w] {
                *v = inv;
            }
            map.data()[plane..plane + h * w].iter().copied().sum::<T>() / n
        }
    };
    Ok((value, seed))
}

fn normalizer<T: Scalar>() -> Arc<BnAffine<T>> {
    let scale = IMAGENET_STD.map(|s| T::from_f64_lossy(1.0 / f64::from(s)));
    let shift = (0..3)
        .map(|c| T::from_f64_lossy(-f64::from(IMAGENET_MEAN[c]) / f64::from(IMAGENET_STD[c])))
        .collect();
    Arc::new(BnAffine {
        scale: scale.to_vec(),
        shift,
    })
}

/// Objective of `channel` on an RGB image in `[0,1]`, without augmentation.
pub fn evaluate<T: Scalar, M: FeatureModel<T> + ?Sized>(
    model: &M,
    rgb: &Tensor<T>,
    channel: usize,
    objective: Objective,
) -> Result<T> {
    let mut tape = Tape::new();
    let x = tape.leaf(rgb.clone());
    let x = tape.affine(x, &normalizer())?;
    let out = model.objective(&mut tape, x)?;
    Ok(select(tape.value(out), channel, objective)?.0)
}

/// Adam with PyTorch's update rule, minimising.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let c = |v: f64| T::from_f64_lossy(v);
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let step_size = c(self.lr / (1.0 - self.beta1.powi(self.t)));
        let bc2_sqrt = c((1.0 - self.beta2.powi(self.t)).sqrt());
        let eps = c(self.eps);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.m[i] * b1 + g * (T::one() - b1);
            self.v[i] = self.v[i] * b2 + g * g * (T::one() - b2);
            let denom = self.v[i].sqrt() / bc2_sqrt + eps;
            params[i] = params[i] - step_size * self.m[i] / denom;
        }
    }
}

/// One optimisation problem: model, target channel and configuration.
pub struct FzProblem<'a, T: Scalar, M: FeatureModel<T> + ?Sized> {
    model: &'a M,
    config: &'a FzConfig,
    spectral: Spectral<T>,
    normalize: Arc<BnAffine<T>>,
    channel: usize,
    objective: Objective,
}

impl<'a, T: Scalar, M: FeatureModel<T> + ?Sized> FzProblem<'a, T, M> {
    pub fn new(model: &'a M, channel: usize, objective: Objective, config: &'a FzConfig) -> Result<Self> {
        config.validate()?;
        if channel >= model.channels() {
            return Err(Error::SelectorOutOfRange(format!(
                "channel {channel} of {} at {}",
                model.channels(),
                model.target()
            )));
        }
        Ok(Self {
            model,
            config,
            spectral: Spectral::new(config.image_size, config.image_size)?,
            normalize: normalizer(),
            channel,
            objective,
        })
    }

    pub fn spectral(&self) -> &Spectral<T> {
        &self.spectral
    }

    /// Objective under `aug` and its gradient with respect to `params`.
    pub fn value_and_grad(&self, params: &[T], aug: &Augmentation) -> Result<(T, Vec<T>)> {
        let mut tape = Tape::new();
        let raw = tape.leaf(self.spectral.inverse(params)?);
        let x = tape.channel_mix(raw, self.spectral.color_matrix(), 3)?;
        let x = tape.sigmoid(x);
        let x = aug.apply(&mut tape, x, self.config)?;
        let x = tape.affine(x, &self.normalize)?;
        let out = self.model.objective(&mut tape, x)?;
        let (value, seed) = select(tape.value(out), self.channel, self.objective)?;
        let mut grads = tape.backward(out, seed)?;
        let g = grads
            .take(raw)
            .unwrap_or_else(|| Tensor::zeros(tape.value(raw).shape()));
        Ok((value, self.spectral.inverse_adjoint(&g)?))
    }

    /// Unaugmented objective of the image `params` encode.
    pub fn value(&self, params: &[T]) -> Result<T> {
        evaluate(self.model, &self.spectral.to_rgb(params)?, self.channel, self.objective)
    }

    fn rng(&self) -> ChaCha8Rng {
        let target = self.model.target();
        ChaCha8Rng::from_seed(fields_digest([
            &self.config.seed.to_le_bytes()[..],
            target.as_bytes(),
            &(self.channel as u64).to_le_bytes()[..],
            self.objective.as_str().as_bytes(),
        ]))
    }

    /// Run the full optimisation.
    pub fn solve(&self) -> Result<FzResult> {
        let cfg = self.config;
        let mut rng = self.rng();
        let sd = cfg.param_sd;
        let mut params: Vec<T> = (0..self.spectral.param_len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::from_f64_lossy(z * sd)
            })
            .collect();
        let mut adam = Adam::new(params.len(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let mut marks: Vec<usize> = vec![0, cfg.steps / 2, cfg.steps];
        marks.dedup();
        let mut checkpoints = Vec::with_capacity(3);
        let record = |step: usize, params: &[T], out: &mut Vec<Checkpoint>| -> Result<()> {
            let v = self.value(params)?.to_f64().unwrap_or(f64::NAN);
            out.push(Checkpoint { step, activation: v });
            Ok(())
        };
        record(0, &params, &mut checkpoints)?;
        for step in 1..=cfg.steps {
            let aug = Augmentation::sample(cfg, &mut rng);
            let (value, mut grad) = self.value_and_grad(&params, &aug)?;
            let v = value.to_f64().unwrap_or(f64::NAN);
            if !v.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step,
                    value: -v,
                    target: format!("{} channel {}", self.model.target(), self.channel),
                });
            }
            // Minimise the negated objective.
            for g in &mut grad {
                *g = -*g;
            }
            adam.step(&mut params, &grad);
            if marks[1..].contains(&step) && step != cfg.steps {
                record(step, &params, &mut checkpoints)?;
            }
        }
        let image = self.spectral.to_rgb(&params)?;
        let final_activation = evaluate(self.model, &image, self.channel, self.objective)?
            .to_f64()
            .unwrap_or(f64::NAN);
        checkpoints.push(Checkpoint {
            step: cfg.steps,
            activation: final_activation,
        });
        let never_activated = checkpoints.iter().all(|c| !(c.activation > 0.0));
        Ok(FzResult {
            meta: FzMeta {
                target: self.model.target(),
                channel: self.channel,
                objective: self.objective,
                final_activation,
                never_activated,
                checkpoints,
                seed: cfg.seed,
                config_hash: cfg.config_hash(),
                weights_hash: self.model.weights_hash().to_string(),
                image_shape: image.shape().to_vec(),
                reduced_config: cfg.is_reduced(),
            },
            image: image.cast(),
        })
    }
}

/// Visualise `channel` of `model`'s target.
pub fn visualize<T: Scalar, M: FeatureModel<T> + ?Sized>(
    model: &M,
    channel: usize,
    objective: Objective,
    config: &FzConfig,
) -> Result<FzResult> {
    FzProblem::new(model, channel, objective, config)?.solve()
}

/// Unaugmented objective value at an optimisation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub activation: f64,
}

/// Everything about an FZ except its pixels; stored as the cache sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FzMeta {
    pub target: String,
    pub channel: usize,
    pub objective: Objective,
    /// Pre-ReLU objective on the final image.
    pub final_activation: f64,
    /// No checkpoint reached a positive activation.
    pub never_activated: bool,
    pub checkpoints: Vec<Checkpoint>,
    pub seed: u64,
    pub config_hash: String,
    pub weights_hash: String,
    pub image_shape: Vec<usize>,
    /// Fewer steps or a smaller image than the defaults.
    pub reduced_config: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FzResult {
    pub meta: FzMeta,
    /// RGB in `(0,1)`, `1×3×S×S`.
    pub image: Tensor<f32>,
}

impl FzResult {
    pub fn final_activation(&self) -> f64 {
        self.meta.final_activation
    }

    pub fn channel(&self) -> usize {
        self.meta.channel
    }

    pub fn objective(&self) -> Objective {
        self.meta.objective
    }

    /// The tap this FZ targets, for ResNet18 results.
    pub fn tap(&self) -> Result<Tap> {
        self.meta.target.parse()
    }

    /// The image normalised for the network.
    pub fn normalized(&self) -> Result<Tensor<f32>> {
        crate::resnet::preprocess::normalize(&self.image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut adam = Adam::<f64>::new(2, 0.05, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.95).abs() < 1e-7);
        assert!((p[1] + 0.95).abs() < 1e-7);
    }

    #[test]
    fn selectors() {
        let map = Tensor::from_fn(&[1, 2, 4, 4], |i| i as f64);
        let (v, seed) = select(&map, 1, Objective::Center).unwrap();
        assert_eq!(v, (16 + 2 * 4 + 2) as f64);
        assert_eq!(seed.data().iter().sum::<f64>(), 1.0);
        let (m, _) = select(&map, 0, Objective::Channel).unwrap();
        assert_eq!(m, 7.5);
        assert!(select(&map, 2, Objective::Center).is_err());
    }
}
