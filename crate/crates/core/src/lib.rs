// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod config;
pub mod digest;
pub mod error;
pub mod featviz;
pub mod metrics;
pub mod resnet;
pub mod stats;
pub mod sweep;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
