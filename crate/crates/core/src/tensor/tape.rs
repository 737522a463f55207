// SPDX-License-Identifier: MIT OR Apache-2.0

//! Wengert-list reverse mode over the fixed op set.
//!
//! Every op appends one node holding its output value plus whatever the
//! backward pass needs. Weights enter as shared constants, so only leaf
//! tensors (the image and its parameterisation) receive gradients.

use std::sync::Arc;

use super::image_ops::{self, crop_backward, ResizeMode};
use super::ops::{self, BnAffine};
use super::{check_same_shape, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Arc<Tensor<T>>,
        stride: usize,
        pad: usize,
    },
    Affine {
        input: Var,
        params: Arc<BnAffine<T>>,
    },
    Relu {
        input: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Add {
        a: Var,
        b: Var,
    },
    GlobalAvgPool {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Arc<Tensor<T>>,
    },
    Resize {
        input: Var,
        mode: ResizeMode,
    },
    Crop {
        input: Var,
        y0: usize,
        x0: usize,
    },
    ReflectPad {
        input: Var,
        pad: usize,
    },
    ConstPad {
        input: Var,
        pad: usize,
    },
    Rotate {
        input: Var,
        degrees: f64,
    },
    ChannelMix {
        input: Var,
        matrix: Arc<[T]>,
    },
    Sigmoid {
        input: Var,
    },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Ordered record of executed ops. Confined to one optimisation run.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`] for the tape's leaves.
#[derive(Debug)]
pub struct Grads<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    visited: Vec<usize>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient for a leaf; `None` when the output does not depend on it.
    pub fn wrt(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Node indices in the order backward processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every recorded node.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        weight: &Arc<Tensor<T>>,
        bias: Option<&[T]>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let y = ops::conv2d(self.value(x), weight, bias, stride, pad)?;
        Ok(self.push(
            y,
            Op::Conv2d {
                input: x,
                weight: Arc::clone(weight),
                stride,
                pad,
            },
        ))
    }

    /// Per-channel `x·scale + shift` (inference batch norm, normalisation).
    pub fn affine(&mut self, x: Var, params: &Arc<BnAffine<T>>) -> Result<Var> {
        let y = ops::channel_affine(self.value(x), &params.scale, &params.shift)?;
        Ok(self.push(
            y,
            Op::Affine {
                input: x,
                params: Arc::clone(params),
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(y, Op::Relu { input: x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid { input: x })
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let out = ops::maxpool2d(self.value(x), k, stride, pad)?;
        Ok(self.push(
            out.output,
            Op::MaxPool {
                input: x,
                argmax: out.argmax,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(y, Op::GlobalAvgPool { input: x }))
    }

    pub fn linear(&mut self, x: Var, weight: &Arc<Tensor<T>>, bias: Option<&[T]>) -> Result<Var> {
        let y = ops::linear(self.value(x), weight, bias)?;
        Ok(self.push(
            y,
            Op::Linear {
                input: x,
                weight: Arc::clone(weight),
            },
        ))
    }

    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Var> {
        let y = image_ops::bilinear_resize(self.value(x), out_h, out_w, mode)?;
        Ok(self.push(y, Op::Resize { input: x, mode }))
    }

    pub fn crop(&mut self, x: Var, y0: usize, x0: usize, h: usize, w: usize) -> Result<Var> {
        let y = image_ops::crop(self.value(x), y0, x0, h, w)?;
        Ok(self.push(y, Op::Crop { input: x, y0, x0 }))
    }

    pub fn reflection_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        let y = image_ops::reflection_pad(self.value(x), pad)?;
        Ok(self.push(y, Op::ReflectPad { input: x, pad }))
    }

    pub fn constant_pad(&mut self, x: Var, pad: usize, value: T) -> Result<Var> {
        let y = image_ops::constant_pad(self.value(x), pad, value)?;
        Ok(self.push(y, Op::ConstPad { input: x, pad }))
    }

    pub fn rotate(&mut self, x: Var, degrees: f64) -> Result<Var> {
        let y = image_ops::rotate(self.value(x), degrees)?;
        Ok(self.push(y, Op::Rotate { input: x, degrees }))
    }

    /// Channel mixing with a row-major `C_out×C_in` matrix.
    pub fn channel_mix(&mut self, x: Var, matrix: &Arc<[T]>, c_out: usize) -> Result<Var> {
        let y = ops::channel_mix(self.value(x), matrix, c_out)?;
        Ok(self.push(
            y,
            Op::ChannelMix {
                input: x,
                matrix: Arc::clone(matrix),
            },
        ))
    }

    /// Propagate `seed` (∂L/∂output) back to every leaf, visiting recorded
    /// nodes in exact reverse execution order.
    pub fn backward(&self, output: Var, seed: Tensor<T>) -> Result<Grads<T>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::SelectorOutOfRange(format!(
                "var {} on a tape of {} nodes",
                output.0,
                self.nodes.len()
            )));
        }
        check_same_shape("backward seed", &seed, self.value(output))?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut visited = Vec::new();
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            visited.push(idx);
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d {
                    input,
                    weight,
                    stride,
                    pad,
                } => {
                    let shape = self.value(*input).shape();
                    let gi = ops::conv2d_input_grad(&g, weight, shape, *stride, *pad)?;
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Affine { input, params } => {
                    let zeros = vec![T::zero(); params.channels()];
                    let gi = ops::channel_affine(&g, &params.scale, &zeros)?;
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Relu { input } => {
                    let mut gi = g;
                    for (gv, &y) in gi.data_mut().iter_mut().zip(node.value.data()) {
                        if !(y > T::zero()) {
                            *gv = T::zero();
                        }
                    }
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Sigmoid { input } => {
                    let mut gi = g;
                    for (gv, &y) in gi.data_mut().iter_mut().zip(node.value.data()) {
                        *gv = *gv * y * (T::one() - y);
                    }
                    accumulate(&mut grads[input.0], gi);
                }
                Op::MaxPool { input, argmax } => {
                    let mut gi = Tensor::zeros(self.value(*input).shape());
                    let d = gi.data_mut();
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        d[src] = d[src] + gv;
                    }
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::GlobalAvgPool { input } => {
                    let shape = self.value(*input).shape();
                    let plane = shape[2] * shape[3];
                    let inv = T::one() / T::from_usize(plane).unwrap();
                    let mut gi = Vec::with_capacity(g.len() * plane);
                    for &gv in g.data() {
                        gi.extend(std::iter::repeat(gv * inv).take(plane));
                    }
                    accumulate(&mut grads[input.0], Tensor::from_parts(shape.to_vec(), gi));
                }
                Op::Linear { input, weight } => {
                    let gi = ops::linear(&g, &transpose(weight), None)?;
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Resize { input, mode } => {
                    let gi = image_ops::bilinear_resize_backward(&g, self.value(*input).shape(), *mode)?;
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Crop { input, y0, x0 } => {
                    let gi = crop_backward(&g, self.value(*input).shape(), *y0, *x0);
                    accumulate(&mut grads[input.0], gi);
                }
                Op::ReflectPad { input, pad } => {
                    let gi = image_ops::reflection_pad_backward(&g, self.value(*input).shape(), *pad);
                    accumulate(&mut grads[input.0], gi);
                }
                Op::ConstPad { input, pad } => {
                    let [_, _, h, w] = self.value(*input).dims4("constant_pad")?;
                    let gi = image_ops::crop(&g, *pad, *pad, h, w)?;
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Rotate { input, degrees } => {
                    let gi = image_ops::rotate_backward(&g, *degrees)?;
                    accumulate(&mut grads[input.0], gi);
                }
                Op::ChannelMix { input, matrix } => {
                    let c_in = self.value(*input).shape()[1];
                    let c_out = matrix.len() / c_in;
                    let mut mt = vec![T::zero(); matrix.len()];
                    for o in 0..c_out {
                        for i in 0..c_in {
                            mt[i * c_out + o] = matrix[o * c_in + i];
                        }
                    }
                    let gi = ops::channel_mix(&g, &mt, c_in)?;
                    accumulate(&mut grads[input.0], gi);
                }
            }
        }
        Ok(Grads { grads, visited })
    }
}

fn transpose<T: Scalar>(w: &Tensor<T>) -> Tensor<T> {
    let (o, i) = (w.shape()[0], w.shape()[1]);
    let d = w.data();
    Tensor::from_fn(&[i, o], |k| d[(k % o) * i + k / o])
}
