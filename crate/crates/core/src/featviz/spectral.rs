// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fourier-basis image parameterisation.
//!
//! Parameters are the real/imaginary parts of a half spectrum per colour
//! channel, laid out `[3, H, W/2+1, 2]`. The image is the orthonormal
//! inverse real DFT of the 1/f-scaled spectrum divided by
//! [`SPECTRUM_MAGIC`], followed by colour decorrelation and a sigmoid. The
//! inverse DFT is evaluated as dense products with cosine/sine tables, which
//! keeps forward and adjoint exact mirrors of each other.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::config::{COLOR_CORRELATION_SVD_SQRT, SPECTRUM_MAGIC};
use crate::error::{Error, Result};
use crate::tensor::{channel_mix, gemm, sigmoid, Scalar, Tensor, Trans};

/// Signed DFT frequency of bin `k` out of `n` (as `numpy.fft.fftfreq`).
fn fftfreq(k: usize, n: usize) -> f64 {
    let k = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
    k / n as f64
}

/// The colour matrix scaled so its largest column has unit norm.
pub fn color_correlation_normalized() -> [[f64; 3]; 3] {
    let m = COLOR_CORRELATION_SVD_SQRT.map(|r| r.map(f64::from));
    let max_norm = (0..3)
        .map(|j| (0..3).map(|i| m[i][j] * m[i][j]).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    m.map(|r| r.map(|v| v / max_norm))
}

#[derive(Debug, Clone)]
pub struct Spectral<T: Scalar> {
    h: usize,
    w: usize,
    wf: usize,
    /// `cos(2π·n·k/H)`, `H×H`.
    ch: Vec<T>,
    /// `sin(2π·n·k/H)`, `H×H`.
    sh: Vec<T>,
    /// `c_l·cos(2π·l·m/W)`, `Wf×W`.
    p: Vec<T>,
    /// `c_l·sin(2π·l·m/W)`, `Wf×W`.
    q: Vec<T>,
    /// 1/f spectrum scale times the orthonormal and magic factors, `H×Wf`.
    scale: Vec<T>,
    color: Arc<[T]>,
}

impl<T: Scalar> Spectral<T> {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        if h == 0 || w < 2 || w % 2 != 0 {
            return Err(Error::invalid(
                "spectral",
                format!("image {h}×{w}: width must be even and both extents positive"),
            ));
        }
        let wf = w / 2 + 1;
        let cast = |v: f64| T::from_f64_lossy(v);
        let mut ch = Vec::with_capacity(h * h);
        let mut sh = Vec::with_capacity(h * h);
        for n in 0..h {
            for k in 0..h {
                // Reduce the angle index first so sin(π) and friends are exact zeros.
                let a = 2.0 * PI * ((n * k) % h) as f64 / h as f64;
                ch.push(cast(a.cos()));
                sh.push(cast(if (n * k) % h == 0 || 2 * ((n * k) % h) == h { 0.0 } else { a.sin() }));
            }
        }
        let mut p = Vec::with_capacity(wf * w);
        let mut q = Vec::with_capacity(wf * w);
        for l in 0..wf {
            let c = if l == 0 || 2 * l == w { 1.0 } else { 2.0 };
            for m in 0..w {
                let j = (l * m) % w;
                let a = 2.0 * PI * j as f64 / w as f64;
                p.push(cast(c * a.cos()));
                q.push(cast(if j == 0 || 2 * j == w { 0.0 } else { c * a.sin() }));
            }
        }
        let floor = 1.0 / h.max(w) as f64;
        let norm = 1.0 / ((h * w) as f64).sqrt() / SPECTRUM_MAGIC;
        let mut scale = Vec::with_capacity(h * wf);
        for k in 0..h {
            for l in 0..wf {
                let (fy, fx) = (fftfreq(k, h), fftfreq(l, w));
                let f = (fx * fx + fy * fy).sqrt().max(floor);
                scale.push(cast(norm / f));
            }
        }
        let color: Vec<T> = color_correlation_normalized()
            .iter()
            .flatten()
            .map(|&v| cast(v))
            .collect();
        Ok(Self {
            h,
            w,
            wf,
            ch,
            sh,
            p,
            q,
            scale,
            color: color.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    /// Length of the parameter buffer.
    pub fn param_len(&self) -> usize {
        3 * self.h * self.wf * 2
    }

    /// The decorrelation matrix as used by [`crate::tensor::Tape::channel_mix`].
    pub fn color_matrix(&self) -> &Arc<[T]> {
        &self.color
    }

    fn check_len(&self, params: &[T]) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(Error::ShapeMismatch {
                op: "spectral",
                lhs: vec![params.len()],
                rhs: vec![3, self.h, self.wf, 2],
            });
        }
        Ok(())
    }

    /// Scaled inverse DFT: parameters → `1×3×H×W` pre-decorrelation image.
    pub fn inverse(&self, params: &[T]) -> Result<Tensor<T>> {
        self.check_len(params)?;
        let (h, w, wf) = (self.h, self.w, self.wf);
        let nfreq = h * wf;
        let mut out = vec![T::zero(); 3 * h * w];
        let mut sr = vec![T::zero(); nfreq];
        let mut si = vec![T::zero(); nfreq];
        let mut yr = vec![T::zero(); nfreq];
        let mut yi = vec![T::zero(); nfreq];
        for c in 0..3 {
            let block = &params[c * nfreq * 2..(c + 1) * nfreq * 2];
            for i in 0..nfreq {
                sr[i] = block[2 * i] * self.scale[i];
                si[i] = block[2 * i + 1] * self.scale[i];
            }
            // Yr = Ch·Sr − Sh·Si, Yi = Sh·Sr + Ch·Si
            gemm(h, h, wf, &self.ch, Trans::No, &sr, Trans::No, T::zero(), &mut yr);
            let neg_si: Vec<T> = si.iter().map(|&v| -v).collect();
            gemm(h, h, wf, &self.sh, Trans::No, &neg_si, Trans::No, T::one(), &mut yr);
            gemm(h, h, wf, &self.sh, Trans::No, &sr, Trans::No, T::zero(), &mut yi);
            gemm(h, h, wf, &self.ch, Trans::No, &si, Trans::No, T::one(), &mut yi);
            // x = Yr·P − Yi·Q
            let plane = &mut out[c * h * w..(c + 1) * h * w];
            gemm(h, wf, w, &yr, Trans::No, &self.p, Trans::No, T::zero(), plane);
            let neg_yi: Vec<T> = yi.iter().map(|&v| -v).collect();
            gemm(h, wf, w, &neg_yi, Trans::No, &self.q, Trans::No, T::one(), plane);
        }
        Tensor::new(vec![1, 3, h, w], out)
    }

    /// Adjoint of [`Self::inverse`]: image gradient → parameter gradient.
    pub fn inverse_adjoint(&self, grad: &Tensor<T>) -> Result<Vec<T>> {
        let (h, w, wf) = (self.h, self.w, self.wf);
        if grad.shape() != [1, 3, h, w] {
            return Err(Error::ShapeMismatch {
                op: "spectral adjoint",
                lhs: grad.shape().to_vec(),
                rhs: vec![1, 3, h, w],
            });
        }
        let nfreq = h * wf;
        let mut out = vec![T::zero(); self.param_len()];
        let mut gyr = vec![T::zero(); nfreq];
        let mut gyi = vec![T::zero(); nfreq];
        let mut gsr = vec![T::zero(); nfreq];
        let mut gsi = vec![T::zero(); nfreq];
        for c in 0..3 {
            let g = &grad.data()[c * h * w..(c + 1) * h * w];
            // gYr = g·Pᵀ, gYi = −g·Qᵀ
            gemm(h, w, wf, g, Trans::No, &self.p, Trans::Yes, T::zero(), &mut gyr);
            gemm(h, w, wf, g, Trans::No, &self.q, Trans::Yes, T::zero(), &mut gyi);
            for v in &mut gyi {
                *v = -*v;
            }
            // gSr = Chᵀ·gYr + Shᵀ·gYi, gSi = −Shᵀ·gYr + Chᵀ·gYi
            gemm(h, h, wf, &self.ch, Trans::Yes, &gyr, Trans::No, T::zero(), &mut gsr);
            gemm(h, h, wf, &self.sh, Trans::Yes, &gyi, Trans::No, T::one(), &mut gsr);
            gemm(h, h, wf, &self.ch, Trans::Yes, &gyi, Trans::No, T::zero(), &mut gsi);
            let neg_gyr: Vec<T> = gyr.iter().map(|&v| -v).collect();
            gemm(h, h, wf, &self.sh, Trans::Yes, &neg_gyr, Trans::No, T::one(), &mut gsi);
            let block = &mut out[c * nfreq * 2..(c + 1) * nfreq * 2];
            for i in 0..nfreq {
                block[2 * i] = gsr[i] * self.scale[i];
                block[2 * i + 1] = gsi[i] * self.scale[i];
            }
        }
        Ok(out)
    }

    /// Full parameterisation without a tape: RGB image in `(0,1)`.
    pub fn to_rgb(&self, params: &[T]) -> Result<Tensor<T>> {
        let raw = self.inverse(params)?;
        Ok(sigmoid(&channel_mix(&raw, &self.color, 3)?))
    }
}
