// SPDX-License-Identifier: MIT OR Apache-2.0

//! Spatial resampling on NCHW images: bilinear resize, crops, padding and
//! rotation, each with its adjoint for the tape.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Source-coordinate convention for [`bilinear_resize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    /// Half-pixel centres (`align_corners=false`).
    HalfPixel,
    /// Corner pixels map onto corner pixels (`align_corners=true`).
    AlignCorners,
}

struct AxisMap<T> {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<T>,
}

fn axis_map<T: Scalar>(input: usize, output: usize, mode: ResizeMode) -> AxisMap<T> {
    let mut lo = Vec::with_capacity(output);
    let mut hi = Vec::with_capacity(output);
    let mut frac = Vec::with_capacity(output);
    let fin = T::from_usize(input).unwrap();
    let fout = T::from_usize(output).unwrap();
    let half = T::from_f64_lossy(0.5);
    for d in 0..output {
        let fd = T::from_usize(d).unwrap();
        let src = match mode {
            ResizeMode::HalfPixel => {
                let s = (fd + half) * (fin / fout) - half;
                if s < T::zero() {
                    T::zero()
                } else {
                    s
                }
            }
            ResizeMode::AlignCorners => {
                if output > 1 {
                    fd * (T::from_usize(input - 1).unwrap() / T::from_usize(output - 1).unwrap())
                } else {
                    T::zero()
                }
            }
        };
        let i0 = src.floor().to_usize().unwrap().min(input - 1);
        let i1 = (i0 + 1).min(input - 1);
        lo.push(i0);
        hi.push(i1);
        frac.push(src - T::from_usize(i0).unwrap());
    }
    AxisMap { lo, hi, frac }
}

/// Bilinear resize of every plane to `out_h × out_w`.
pub fn bilinear_resize<T: Scalar>(
    img: &Tensor<T>,
    out_h: usize,
    out_w: usize,
    mode: ResizeMode,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = img.dims4("bilinear_resize")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bilinear_resize", "output extents must be ≥ 1"));
    }
    let ry = axis_map::<T>(h, out_h, mode);
    let rx = axis_map::<T>(w, out_w, mode);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in img.data().chunks(h * w) {
        for oy in 0..out_h {
            let (y0, y1, ly) = (ry.lo[oy], ry.hi[oy], ry.frac[oy]);
            let r0 = &plane[y0 * w..(y0 + 1) * w];
            let r1 = &plane[y1 * w..(y1 + 1) * w];
            for ox in 0..out_w {
                let (x0, x1, lx) = (rx.lo[ox], rx.hi[ox], rx.frac[ox]);
                let top = r0[x0] * (T::one() - lx) + r0[x1] * lx;
                let bot = r1[x0] * (T::one() - lx) + r1[x1] * lx;
                out.push(top * (T::one() - ly) + bot * ly);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, out_h, out_w], out))
}

/// Adjoint of [`bilinear_resize`].
pub fn bilinear_resize_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    mode: ResizeMode,
) -> Result<Tensor<T>> {
    let [n, c, out_h, out_w] = grad_out.dims4("bilinear_resize_backward")?;
    let (h, w) = (input_shape[2], input_shape[3]);
    debug_assert_eq!(input_shape, [n, c, h, w]);
    let ry = axis_map::<T>(h, out_h, mode);
    let rx = axis_map::<T>(w, out_w, mode);
    let mut grad = vec![T::zero(); n * c * h * w];
    for (gplane, dplane) in grad_out.data().chunks(out_h * out_w).zip(grad.chunks_mut(h * w)) {
        for oy in 0..out_h {
            let (y0, y1, ly) = (ry.lo[oy], ry.hi[oy], ry.frac[oy]);
            for ox in 0..out_w {
                let (x0, x1, lx) = (rx.lo[ox], rx.hi[ox], rx.frac[ox]);
                let g = gplane[oy * out_w + ox];
                let gt = g * (T::one() - ly);
                let gb = g * ly;
                dplane[y0 * w + x0] = dplane[y0 * w + x0] + gt * (T::one() - lx);
                dplane[y0 * w + x1] = dplane[y0 * w + x1] + gt * lx;
                dplane[y1 * w + x0] = dplane[y1 * w + x0] + gb * (T::one() - lx);
                dplane[y1 * w + x1] = dplane[y1 * w + x1] + gb * lx;
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), grad))
}

/// Window `[y0, y0+h) × [x0, x0+w)` of every plane.
pub fn crop<T: Scalar>(img: &Tensor<T>, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let [n, c, ih, iw] = img.dims4("crop")?;
    if h == 0 || w == 0 || y0 + h > ih || x0 + w > iw {
        return Err(Error::invalid(
            "crop",
            format!("window {h}×{w} at ({y0},{x0}) exceeds {ih}×{iw}"),
        ));
    }
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in img.data().chunks(ih * iw) {
        for y in y0..y0 + h {
            out.extend_from_slice(&plane[y * iw + x0..y * iw + x0 + w]);
        }
    }
    Ok(Tensor::from_parts(vec![n, c, h, w], out))
}

pub(crate) fn crop_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    y0: usize,
    x0: usize,
) -> Tensor<T> {
    let (ih, iw) = (input_shape[2], input_shape[3]);
    let [_, _, h, w] = grad_out.dims4("crop_backward").expect("NCHW");
    let mut grad = vec![T::zero(); input_shape.iter().product()];
    for (g, d) in grad_out.data().chunks(h * w).zip(grad.chunks_mut(ih * iw)) {
        for y in 0..h {
            d[(y0 + y) * iw + x0..(y0 + y) * iw + x0 + w].copy_from_slice(&g[y * w..(y + 1) * w]);
        }
    }
    Tensor::from_parts(input_shape.to_vec(), grad)
}

/// Centered `size × size` window, offset `floor((H − size)/2)`.
pub fn center_crop<T: Scalar>(img: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let [_, _, h, w] = img.dims4("center_crop")?;
    if size == 0 || size > h || size > w {
        return Err(Error::invalid(
            "center_crop",
            format!("crop {size} does not fit in {h}×{w}"),
        ));
    }
    crop(img, (h - size) / 2, (w - size) / 2, size, size)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Mirror padding that does not repeat the border pixel.
pub fn reflection_pad<T: Scalar>(img: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = img.dims4("reflection_pad")?;
    if pad >= h || pad >= w {
        return Err(Error::invalid(
            "reflection_pad",
            format!("pad {pad} must be smaller than extents {h}×{w}"),
        ));
    }
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let cols: Vec<usize> = (0..ow).map(|x| reflect(x as isize - pad as isize, w)).collect();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in img.data().chunks(h * w) {
        for y in 0..oh {
            let row = &plane[reflect(y as isize - pad as isize, h) * w..][..w];
            out.extend(cols.iter().map(|&x| row[x]));
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

/// Adjoint of [`reflection_pad`].
pub fn reflection_pad_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    pad: usize,
) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut grad = vec![T::zero(); input_shape.iter().product()];
    for (g, d) in grad_out.data().chunks(oh * ow).zip(grad.chunks_mut(h * w)) {
        for y in 0..oh {
            let sy = reflect(y as isize - pad as isize, h);
            for x in 0..ow {
                let sx = reflect(x as isize - pad as isize, w);
                d[sy * w + sx] = d[sy * w + sx] + g[y * ow + x];
            }
        }
    }
    Tensor::from_parts(input_shape.to_vec(), grad)
}

/// Pad every side by `pad` pixels of `value`.
pub fn constant_pad<T: Scalar>(img: &Tensor<T>, pad: usize, value: T) -> Result<Tensor<T>> {
    let [n, c, h, w] = img.dims4("constant_pad")?;
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![value; n * c * oh * ow];
    for (src, dst) in img.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        for y in 0..h {
            dst[(y + pad) * ow + pad..(y + pad) * ow + pad + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

/// Bilinear taps (flat index, weight) that an output pixel of a rotation reads.
fn rotation_taps<T: Scalar>(h: usize, w: usize, degrees: f64) -> Vec<[(usize, T); 4]> {
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let mut cell = [(0usize, T::zero()); 4];
            let corners = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x0 + 1.0, (1.0 - fy) * fx),
                (y0 + 1.0, x0, fy * (1.0 - fx)),
                (y0 + 1.0, x0 + 1.0, fy * fx),
            ];
            for (slot, &(yy, xx, wt)) in cell.iter_mut().zip(&corners) {
                if yy >= 0.0 && xx >= 0.0 && (yy as usize) < h && (xx as usize) < w {
                    *slot = (yy as usize * w + xx as usize, T::from_f64_lossy(wt));
                }
            }
            taps.push(cell);
        }
    }
    taps
}

/// Rotate every plane by `degrees` about its centre with bilinear sampling;
/// samples falling outside the image read zero.
pub fn rotate<T: Scalar>(img: &Tensor<T>, degrees: f64) -> Result<Tensor<T>> {
    let [n, c, h, w] = img.dims4("rotate")?;
    let taps = rotation_taps::<T>(h, w, degrees);
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in img.data().chunks(h * w) {
        out.extend(
            taps.iter()
                .map(|cell| cell.iter().fold(T::zero(), |acc, &(i, wt)| acc + plane[i] * wt)),
        );
    }
    Ok(Tensor::from_parts(vec![n, c, h, w], out))
}

/// Adjoint of [`rotate`].
pub fn rotate_backward<T: Scalar>(grad_out: &Tensor<T>, degrees: f64) -> Result<Tensor<T>> {
    let [_, _, h, w] = grad_out.dims4("rotate_backward")?;
    let taps = rotation_taps::<T>(h, w, degrees);
    let mut grad = vec![T::zero(); grad_out.len()];
    for (g, d) in grad_out.data().chunks(h * w).zip(grad.chunks_mut(h * w)) {
        for (cell, &gv) in taps.iter().zip(g) {
            for &(i, wt) in cell {
                d[i] = d[i] + gv * wt;
            }
        }
    }
    Ok(Tensor::from_parts(grad_out.shape().to_vec(), grad))
}
