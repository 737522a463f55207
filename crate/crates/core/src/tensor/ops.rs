// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward kernels (and the input-gradient kernel of convolution).

use super::{check_same_shape, gemm, Scalar, Tensor, Trans};
use crate::error::{Error, Result};

fn out_extent(op: &'static str, size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid(op, "stride must be ≥ 1"));
    }
    let padded = size + 2 * pad;
    if padded < k {
        return Err(Error::invalid(
            op,
            format!("kernel {k} larger than padded extent {padded}"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn conv_geom<T: Scalar>(
    input_shape: [usize; 4],
    weight: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom> {
    let [_, c, h, w] = input_shape;
    let [_, wc, kh, kw] = weight.dims4("conv2d")?;
    if wc != c {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: input_shape.to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    let oh = out_extent("conv2d", h, kh, stride, pad)?;
    let ow = out_extent("conv2d", w, kw, stride, pad)?;
    Ok(ConvGeom {
        c,
        h,
        w,
        kh,
        kw,
        oh,
        ow,
        stride,
        pad,
    })
}

/// Unfold one image `[C,H,W]` into `[C·KH·KW, OH·OW]` columns (zero padding).
fn im2col<T: Scalar>(g: &ConvGeom, img: &[T], cols: &mut [T]) {
    let plane = g.oh * g.ow;
    let mut row = 0;
    for c in 0..g.c {
        let src = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *out = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image.
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    let plane = g.oh * g.ow;
    let mut row = 0;
    for c in 0..g.c {
        let dst = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] = drow[ix as usize] + src[oy * g.ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// 2-D convolution, NCHW input and OIHW weight, symmetric zero padding.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let dims = input.dims4("conv2d")?;
    let g = conv_geom(dims, weight, stride, pad)?;
    let o = weight.shape()[0];
    if let Some(b) = bias {
        if b.len() != o {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: vec![b.len()],
                rhs: weight.shape().to_vec(),
            });
        }
    }
    let n = dims[0];
    let ckk = g.c * g.kh * g.kw;
    let plane = g.oh * g.ow;
    let mut out = vec![T::zero(); n * o * plane];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); ckk * plane]
    };
    for b in 0..n {
        let img = &input.data()[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w];
        let dst = &mut out[b * o * plane..(b + 1) * o * plane];
        if let Some(bias) = bias {
            for (ch, &bv) in bias.iter().enumerate() {
                dst[ch * plane..(ch + 1) * plane].fill(bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let src: &[T] = if g.is_pointwise() {
            img
        } else {
            im2col(&g, img, &mut cols);
            &cols
        };
        gemm(o, ckk, plane, weight.data(), Trans::No, src, Trans::No, beta, dst);
    }
    Ok(Tensor::from_parts(vec![n, o, g.oh, g.ow], out))
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_input_grad<T: Scalar>(
    grad_out: &Tensor<T>,
    weight: &Tensor<T>,
    input_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let dims: [usize; 4] = input_shape
        .try_into()
        .map_err(|_| Error::invalid("conv2d_input_grad", "input must be NCHW"))?;
    let g = conv_geom(dims, weight, stride, pad)?;
    let o = weight.shape()[0];
    let n = dims[0];
    let expected = [n, o, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv2d_input_grad",
            lhs: grad_out.shape().to_vec(),
            rhs: expected.to_vec(),
        });
    }
    let ckk = g.c * g.kh * g.kw;
    let plane = g.oh * g.ow;
    let img_len = g.c * g.h * g.w;
    let mut grad_in = vec![T::zero(); n * img_len];
    let mut cols = vec![T::zero(); ckk * plane];
    for b in 0..n {
        let gy = &grad_out.data()[b * o * plane..(b + 1) * o * plane];
        let dst = &mut grad_in[b * img_len..(b + 1) * img_len];
        if g.is_pointwise() {
            gemm(ckk, o, plane, weight.data(), Trans::Yes, gy, Trans::No, T::zero(), dst);
        } else {
            gemm(ckk, o, plane, weight.data(), Trans::Yes, gy, Trans::No, T::zero(), &mut cols);
            col2im(&g, &cols, dst);
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), grad_in))
}

/// Per-channel affine form `y = x·scale + shift` of an inference batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BnAffine<T: Scalar> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

impl<T: Scalar> BnAffine<T> {
    pub fn new(gamma: &[T], beta: &[T], mean: &[T], var: &[T], eps: T) -> Result<Self> {
        let c = gamma.len();
        if beta.len() != c || mean.len() != c || var.len() != c {
            return Err(Error::invalid(
                "batchnorm",
                format!(
                    "parameter lengths differ: gamma {c}, beta {}, mean {}, var {}",
                    beta.len(),
                    mean.len(),
                    var.len()
                ),
            ));
        }
        let mut scale = Vec::with_capacity(c);
        let mut shift = Vec::with_capacity(c);
        for i in 0..c {
            let denom = var[i] + eps;
            if !(denom > T::zero()) {
                return Err(Error::CorruptWeights(format!(
                    "batchnorm channel {i}: var + eps = {denom:?} is not positive"
                )));
            }
            let s = gamma[i] / denom.sqrt();
            scale.push(s);
            shift.push(beta[i] - mean[i] * s);
        }
        Ok(Self { scale, shift })
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

/// Inference-mode batch normalization.
pub fn batchnorm_inference<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let bn = BnAffine::new(gamma, beta, running_mean, running_var, eps)?;
    channel_affine(input, &bn.scale, &bn.shift)
}

/// `y[n,c,…] = x[n,c,…]·scale[c] + shift[c]` on a tensor whose second axis is
/// the channel axis.
pub fn channel_affine<T: Scalar>(input: &Tensor<T>, scale: &[T], shift: &[T]) -> Result<Tensor<T>> {
    let shape = input.shape();
    if shape.len() < 2 || shape[1] != scale.len() || shift.len() != scale.len() {
        return Err(Error::ShapeMismatch {
            op: "channel_affine",
            lhs: shape.to_vec(),
            rhs: vec![scale.len()],
        });
    }
    let c = shape[1];
    let inner: usize = shape[2..].iter().product();
    let mut out = input.data().to_vec();
    for (i, chunk) in out.chunks_mut(inner).enumerate() {
        let ch = i % c;
        let (s, t) = (scale[ch], shift[ch]);
        for v in chunk {
            *v = *v * s + t;
        }
    }
    Ok(Tensor::from_parts(shape.to_vec(), out))
}

/// Mix channels with a `C_out×C_in` row-major matrix: `y[o] = Σ_i m[o,i]·x[i]`.
pub fn channel_mix<T: Scalar>(input: &Tensor<T>, matrix: &[T], c_out: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("channel_mix")?;
    if matrix.len() != c_out * c {
        return Err(Error::ShapeMismatch {
            op: "channel_mix",
            lhs: input.shape().to_vec(),
            rhs: vec![c_out, matrix.len() / c_out.max(1)],
        });
    }
    let plane = h * w;
    let mut out = vec![T::zero(); n * c_out * plane];
    for b in 0..n {
        let src = &input.data()[b * c * plane..(b + 1) * c * plane];
        let dst = &mut out[b * c_out * plane..(b + 1) * c_out * plane];
        gemm(c_out, c, plane, matrix, Trans::No, src, Trans::No, T::zero(), dst);
    }
    Ok(Tensor::from_parts(vec![n, c_out, h, w], out))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("add", a, b)?;
    Ok(Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect(),
    ))
}

/// Max-pool output together with the flat input index chosen per output cell.
#[derive(Debug, Clone)]
pub struct MaxPoolOutput<T: Scalar> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// 2-D max pooling with implicit −∞ padding. Ties keep the first maximum in
/// row-major window order.
pub fn maxpool2d<T: Scalar>(
    input: &Tensor<T>,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<MaxPoolOutput<T>> {
    let [n, c, h, w] = input.dims4("maxpool2d")?;
    if k == 0 {
        return Err(Error::invalid("maxpool2d", "kernel must be ≥ 1"));
    }
    if pad * 2 > k {
        return Err(Error::invalid("maxpool2d", "pad must be at most half the kernel"));
    }
    let oh = out_extent("maxpool2d", h, k, stride, pad)?;
    let ow = out_extent("maxpool2d", w, k, stride, pad)?;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        let v = data[idx];
                        if v > best || best_idx == usize::MAX || v.is_nan() {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::from_parts(vec![n, c, oh, ow], out),
        argmax,
    })
}

/// `[N,C,H,W] → [N,C]` spatial mean.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("global_avg_pool")?;
    let plane = h * w;
    let denom = T::from_usize(plane).unwrap();
    let out = input
        .data()
        .chunks(plane)
        .map(|ch| ch.iter().copied().sum::<T>() / denom)
        .collect();
    Ok(Tensor::from_parts(vec![n, c], out))
}

/// Affine layer: `[N,in] · weight[out,in]^T + bias[out]`.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&[T]>) -> Result<Tensor<T>> {
    let (n, fin) = match input.shape() {
        &[n, f] => (n, f),
        other => return Err(Error::invalid("linear", format!("expected [N, in], got {other:?}"))),
    };
    let (fout, win) = match weight.shape() {
        &[o, i] => (o, i),
        other => return Err(Error::invalid("linear", format!("expected [out, in] weight, got {other:?}"))),
    };
    if fin != win {
        return Err(Error::ShapeMismatch {
            op: "linear",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); n * fout];
    let beta = match bias {
        Some(b) if b.len() == fout => {
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(b);
            }
            T::one()
        }
        Some(b) => {
            return Err(Error::ShapeMismatch {
                op: "linear bias",
                lhs: vec![b.len()],
                rhs: vec![fout],
            })
        }
        None => T::zero(),
    };
    gemm(n, fin, fout, input.data(), Trans::No, weight.data(), Trans::Yes, beta, &mut out);
    Ok(Tensor::from_parts(vec![n, fout], out))
}
