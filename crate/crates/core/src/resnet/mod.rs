// SPDX-License-Identifier: MIT OR Apache-2.0

//! ResNet18: architecture table, weight loading, the tapped inference graph
//! and input preprocessing.

pub mod arch;
mod graph;
pub mod preprocess;
mod weights;

pub use arch::{studied_blocks, studied_taps, BlockKind, BlockRef, Role, Tap};
pub use graph::{center_activation, center_index, ActivationMap, BlockVars, OutputMode, ResNet18, Trace};
pub use weights::{
    load_weights, read_tensors, synthetic_weights, write_tensors, Manifest, TensorEntry, TensorFile,
    WeightStore, FIXTURE_SEED, FORMAT_TAG,
};
