// SPDX-License-Identifier: MIT OR Apache-2.0

//! FZ hyper-parameters and the per-tap jitter schedule.

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::resnet::{Role, Tap};

/// Default optimisation length.
pub const DEFAULT_STEPS: usize = 512;
/// Default Adam learning rate.
pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
/// Constant padding applied before the random transforms.
pub const DEFAULT_PAD: usize = 12;
pub const DEFAULT_PAD_VALUE: f64 = 0.5;
/// Standard deviation of the initial spectrum coefficients.
pub const DEFAULT_PARAM_SD: f64 = 0.01;

/// Scales `1 + (i − 5)/50` for `i` in `0..11`, i.e. 0.90 to 1.10.
pub fn default_scale_aug() -> Vec<f64> {
    (0..11).map(|i| 1.0 + (i as f64 - 5.0) / 50.0).collect()
}

/// Integer degrees −10..=10 plus five extra zeros.
pub fn default_rotate_aug() -> Vec<f64> {
    (-10..=10).map(f64::from).chain([0.0; 5]).collect()
}

/// Jitter used by the FZ of `tap`: none in blocks 1.1 and 2.0, 4 for the
/// Block tap of 2.1 and every tap of 3.0, 16 elsewhere.
pub fn jitter_for(tap: Tap) -> usize {
    match (tap.block.stage(), tap.block.index(), tap.role) {
        (1, 1, _) | (2, 0, _) => 0,
        (2, 1, Role::Block) | (3, 0, _) => 4,
        _ => 16,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FzConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub jitter_primary: usize,
    pub jitter_secondary: usize,
    pub pad: usize,
    pub pad_value: f64,
    pub scale_aug: Vec<f64>,
    pub rotate_aug: Vec<f64>,
    pub seed: u64,
    /// Side length of the optimised (square) image.
    pub image_size: usize,
    pub param_sd: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for FzConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            learning_rate: DEFAULT_LEARNING_RATE,
            jitter_primary: 16,
            jitter_secondary: 8,
            pad: DEFAULT_PAD,
            pad_value: DEFAULT_PAD_VALUE,
            scale_aug: default_scale_aug(),
            rotate_aug: default_rotate_aug(),
            seed: 0,
            image_size: crate::config::INPUT_SIZE,
            param_sd: DEFAULT_PARAM_SD,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl FzConfig {
    /// Defaults with the jitter schedule of `tap`.
    pub fn for_tap(tap: Tap) -> Self {
        Self::default().with_jitter(jitter_for(tap))
    }

    /// Set the primary jitter; the secondary becomes half of it.
    pub fn with_jitter(mut self, primary: usize) -> Self {
        self.jitter_primary = primary;
        self.jitter_secondary = primary / 2;
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_image_size(mut self, size: usize) -> Self {
        self.image_size = size;
        self
    }

    /// No padding, jitter, scaling or rotation.
    pub fn without_augmentation(mut self) -> Self {
        self = self.with_jitter(0);
        self.pad = 0;
        self.scale_aug = vec![1.0];
        self.rotate_aug = vec![0.0];
        self
    }

    /// Whether this run departs from the reference-method defaults.
    pub fn is_reduced(&self) -> bool {
        self.steps < DEFAULT_STEPS || self.image_size != crate::config::INPUT_SIZE
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("fz config", reason));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.jitter_secondary != self.jitter_primary / 2 {
            return bad(format!(
                "secondary jitter {} must be half the primary {}",
                self.jitter_secondary, self.jitter_primary
            ));
        }
        if self.image_size < 8 || self.image_size % 2 != 0 {
            return bad(format!("image size {} must be even and at least 8", self.image_size));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if self.scale_aug.is_empty() || self.scale_aug.iter().any(|s| !(*s > 0.0)) {
            return bad("scale augmentation needs positive entries".into());
        }
        if self.rotate_aug.is_empty() || self.rotate_aug.iter().any(|r| !r.is_finite()) {
            return bad("rotation augmentation needs finite entries".into());
        }
        let jitter_total = self.jitter_primary + self.jitter_secondary;
        if jitter_total >= self.image_size {
            return bad(format!("jitter {jitter_total} swallows a {}px image", self.image_size));
        }
        Ok(())
    }

    /// sha256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("plain data").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tap(s: &str) -> Tap {
        s.parse().unwrap()
    }

    #[test]
    fn schedule() {
        assert_eq!(jitter_for(tap("1.1.input")), 0);
        assert_eq!(jitter_for(tap("2.0.output")), 0);
        assert_eq!(jitter_for(tap("2.1.block")), 4);
        assert_eq!(jitter_for(tap("2.1.input")), 16);
        assert_eq!(jitter_for(tap("3.0.input")), 4);
        assert_eq!(jitter_for(tap("4.0.output")), 16);
    }

    #[test]
    fn secondary_is_half() {
        let c = FzConfig::default().with_jitter(5);
        assert_eq!(c.jitter_secondary, 2);
        c.validate().unwrap();
        let mut broken = c.clone();
        broken.jitter_secondary = 3;
        assert!(broken.validate().is_err());
        assert!(FzConfig::default().with_steps(0).validate().is_err());
    }

    #[test]
    fn augmentation_lists() {
        let s = default_scale_aug();
        assert_eq!(s.len(), 11);
        assert!((s[0] - 0.9).abs() < 1e-12 && (s[10] - 1.1).abs() < 1e-12);
        let r = default_rotate_aug();
        assert_eq!(r.len(), 26);
        assert_eq!(r.iter().filter(|&&d| d == 0.0).count(), 6);
    }

    #[test]
    fn hash_tracks_content() {
        let a = FzConfig::default();
        assert_eq!(a.config_hash(), FzConfig::default().config_hash());
        assert_ne!(a.config_hash(), a.clone().with_seed(1).config_hash());
    }
}
