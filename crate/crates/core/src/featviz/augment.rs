// SPDX-License-Identifier: MIT OR Apache-2.0

//! Random transforms applied to the image before every optimisation step:
//! constant pad, jitter, random scale, random rotation, jitter again.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::FzConfig;
use crate::error::Result;
use crate::tensor::{ResizeMode, Scalar, Tape, Var};

/// One draw of transform parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    /// Crop offsets `(y, x)` of the first jitter.
    pub jitter1: (usize, usize),
    pub scale: f64,
    pub degrees: f64,
    pub jitter2: (usize, usize),
}

impl Augmentation {
    /// Draw in the fixed order jitter, scale, rotation, jitter.
    pub fn sample<R: Rng + ?Sized>(config: &FzConfig, rng: &mut R) -> Self {
        let jitter1 = offsets(rng, config.jitter_primary);
        let scale = config.scale_aug[rng.random_range(0..config.scale_aug.len())];
        let degrees = config.rotate_aug[rng.random_range(0..config.rotate_aug.len())];
        let jitter2 = offsets(rng, config.jitter_secondary);
        Self {
            jitter1,
            scale,
            degrees,
            jitter2,
        }
    }

    pub fn identity() -> Self {
        Self {
            jitter1: (0, 0),
            scale: 1.0,
            degrees: 0.0,
            jitter2: (0, 0),
        }
    }

    /// Record the transform chain on `tape`. The image must be square.
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, config: &FzConfig) -> Result<Var> {
        let mut x = x;
        if config.pad > 0 {
            x = tape.constant_pad(x, config.pad, T::from_f64_lossy(config.pad_value))?;
        }
        x = jitter(tape, x, config.jitter_primary, self.jitter1)?;
        let [_, _, h, w] = tape.value(x).dims4("augment")?;
        if self.scale != 1.0 {
            let nh = (self.scale * h as f64).ceil() as usize;
            let nw = (self.scale * w as f64).ceil() as usize;
            x = tape.resize(x, nh, nw, ResizeMode::AlignCorners)?;
            let pad = h.saturating_sub(nh).div_ceil(2);
            if pad > 0 {
                x = tape.constant_pad(x, pad, T::zero())?;
            }
        }
        if self.degrees != 0.0 {
            x = tape.rotate(x, self.degrees)?;
        }
        jitter(tape, x, config.jitter_secondary, self.jitter2)
    }
}

fn offsets<R: Rng + ?Sized>(rng: &mut R, d: usize) -> (usize, usize) {
    if d == 0 {
        (0, 0)
    } else {
        (rng.random_range(0..d), rng.random_range(0..d))
    }
}

/// Crop away `d` rows and columns starting at the sampled offsets.
fn jitter<T: Scalar>(tape: &mut Tape<T>, x: Var, d: usize, (oy, ox): (usize, usize)) -> Result<Var> {
    if d == 0 {
        return Ok(x);
    }
    let [_, _, h, w] = tape.value(x).dims4("jitter")?;
    tape.crop(x, oy, ox, h - d, w - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    #[test]
    fn identity_is_a_no_op_without_padding() {
        let cfg = FzConfig::default().without_augmentation();
        let mut tape = Tape::<f64>::new();
        let img = Tensor::from_fn(&[1, 3, 8, 8], |i| i as f64);
        let x = tape.leaf(img.clone());
        let y = Augmentation::identity().apply(&mut tape, x, &cfg).unwrap();
        assert_eq!(tape.value(y), &img);
    }

    #[test]
    fn output_sizes_follow_the_chain() {
        let cfg = FzConfig::default().with_jitter(4);
        let aug = Augmentation {
            jitter1: (1, 3),
            scale: 0.9,
            degrees: 5.0,
            jitter2: (1, 0),
        };
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::full(&[1, 3, 32, 32], 0.3));
        let y = aug.apply(&mut tape, x, &cfg).unwrap();
        // 32+24 = 56, jitter → 52, scale ceil(46.8) = 47 padded by 3 → 53, jitter → 51.
        assert_eq!(tape.value(y).shape(), &[1, 3, 51, 51]);
    }

    #[test]
    fn samples_stay_in_range() {
        let cfg = FzConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = Augmentation::sample(&cfg, &mut rng);
            assert!(a.jitter1.0 < 16 && a.jitter1.1 < 16);
            assert!(a.jitter2.0 < 8 && a.jitter2.1 < 8);
            assert!(cfg.scale_aug.contains(&a.scale));
            assert!(cfg.rotate_aug.contains(&a.degrees));
        }
    }
}
