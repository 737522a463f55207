// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixed numeric constants. Every report echoes these values.

use serde::Serialize;

/// Channel means of the standard ImageNet normalisation (RGB, `[0,1]` scale).
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
/// Channel standard deviations of the standard ImageNet normalisation.
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Shorter side after the first preprocessing resize.
pub const RESIZE_SHORTER: usize = 256;
/// Network input extent.
pub const INPUT_SIZE: usize = 224;

/// Batch-norm epsilon of the published model definition.
pub const BN_EPS: f32 = 1e-5;

/// Square-root colour correlation used to decorrelate FZ parameters.
/// Values from the Lucid / Lucent feature-visualization libraries
/// (`color_correlation_svd_sqrt`).
pub const COLOR_CORRELATION_SVD_SQRT: [[f32; 3]; 3] = [
    [0.26, 0.09, 0.02],
    [0.27, 0.00, -0.05],
    [0.27, -0.09, 0.03],
];

/// Lucent divides the inverse-FFT image by this before decorrelation.
pub const SPECTRUM_MAGIC: f64 = 4.0;

/// Constants as they are echoed into report headers.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsEcho {
    pub imagenet_mean: [f32; 3],
    pub imagenet_std: [f32; 3],
    pub resize_shorter: usize,
    pub input_size: usize,
    pub bn_eps: f32,
    pub color_correlation_svd_sqrt: [[f32; 3]; 3],
}

pub fn constants_echo() -> ConstantsEcho {
    ConstantsEcho {
        imagenet_mean: IMAGENET_MEAN,
        imagenet_std: IMAGENET_STD,
        resize_shorter: RESIZE_SHORTER,
        input_size: INPUT_SIZE,
        bn_eps: BN_EPS,
        color_correlation_svd_sqrt: COLOR_CORRELATION_SVD_SQRT,
    }
}
