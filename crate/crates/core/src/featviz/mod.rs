// SPDX-License-Identifier: MIT OR Apache-2.0

//! Feature visualisation: images optimised to drive one channel or its
//! center neuron, with the spectral parameterisation and transform
//! robustness of the reference method.

mod augment;
mod cache;
mod config;
mod optimize;
mod spectral;

pub use augment::Augmentation;
pub use cache::{to_rgb8, FzCache, CACHE_DIR_ENV};
pub use config::{
    default_rotate_aug, default_scale_aug, jitter_for, FzConfig, DEFAULT_LEARNING_RATE, DEFAULT_PAD,
    DEFAULT_STEPS,
};
pub use optimize::{
    evaluate, select, visualize, Adam, Checkpoint, FeatureModel, FzMeta, FzProblem, FzResult, Objective,
    TapModel,
};
pub use spectral::{color_correlation_normalized, Spectral};
