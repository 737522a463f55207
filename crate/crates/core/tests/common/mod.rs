// SPDX-License-Identifier: MIT OR Apache-2.0

//! Helpers shared by the integration tests.

#![allow(dead_code)]

pub mod oracles;

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resstream::featviz::FeatureModel;
use resstream::tensor::{Tape, Var};
use resstream::{Result, Scalar, Tensor};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub const FIXTURE_IMAGES: [&str; 3] = ["gradient_disc", "stripes_checker", "blobs_wide"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-scale..scale)).unwrap())
}

/// Conv → ReLU → conv, optionally with a single layer only.
pub struct ToyNet<T: Scalar> {
    pub w1: Arc<Tensor<T>>,
    pub b1: Vec<T>,
    pub w2: Option<Arc<Tensor<T>>>,
    pub pad: usize,
    pub stride: usize,
    pub name: String,
}

impl<T: Scalar> ToyNet<T> {
    pub fn two_conv(seed: u64, hidden: usize, out: usize) -> Self {
        let mut r = rng(seed);
        Self {
            w1: Arc::new(random_tensor(&mut r, &[hidden, 3, 3, 3], 0.5)),
            b1: (0..hidden).map(|_| T::from_f64(r.random_range(-0.2..0.2)).unwrap()).collect(),
            w2: Some(Arc::new(random_tensor(&mut r, &[out, hidden, 3, 3], 0.5))),
            pad: 1,
            stride: 2,
            name: format!("toy-2conv-{seed}"),
        }
    }

    pub fn single(weight: Tensor<T>, bias: Vec<T>) -> Self {
        Self {
            w1: Arc::new(weight),
            b1: bias,
            w2: None,
            pad: 0,
            stride: 1,
            name: "toy-1conv".into(),
        }
    }
}

impl<T: Scalar> FeatureModel<T> for ToyNet<T> {
    fn target(&self) -> String {
        self.name.clone()
    }

    fn weights_hash(&self) -> &str {
        "toy"
    }

    fn channels(&self) -> usize {
        match &self.w2 {
            Some(w) => w.shape()[0],
            None => self.w1.shape()[0],
        }
    }

    fn objective(&self, tape: &mut Tape<T>, image: Var) -> Result<Var> {
        let x = tape.conv2d(image, &self.w1, Some(&self.b1), self.stride, self.pad)?;
        match &self.w2 {
            Some(w2) => {
                let x = tape.relu(x);
                tape.conv2d(x, w2, None, 1, 1)
            }
            None => Ok(x),
        }
    }
}

/// `n` uniform-noise PNGs of `size`×`size` named `noise_XX.png` under `dir`.
pub fn write_noise_corpus(dir: &std::path::Path, n: usize, size: u32, seed: u64) {
    let mut r = rng(seed);
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let img = image::RgbImage::from_fn(size, size, |_, _| image::Rgb([r.random(), r.random(), r.random()]));
        img.save(dir.join(format!("noise_{i:02}.png"))).unwrap();
    }
}

/// A flat gray PNG.
pub fn write_constant_image(path: &std::path::Path, size: u32, value: u8) {
    image::RgbImage::from_pixel(size, size, image::Rgb([value; 3])).save(path).unwrap();
}
