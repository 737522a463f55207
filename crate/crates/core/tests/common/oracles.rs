// SPDX-License-Identifier: MIT OR Apache-2.0

//! Naive reference implementations: plain index loops and textbook sums,
//! written without reference to the library's code paths.

pub fn conv(
    x: &[f64],
    [n, c, h, w]: [usize; 4],
    wt: &[f64],
    [o, kh, kw]: [usize; 3],
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((b * c + ic) * h + iy as usize) * w + ix as usize]
                                    * wt[((oc * c + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    (out, [n, o, oh, ow])
}

pub fn batchnorm(x: &[f64], c: usize, plane: usize, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = (i / plane) % c;
            (v - mean[ch]) / (var[ch] + eps).sqrt() * gamma[ch] + beta[ch]
        })
        .collect()
}

pub fn maxpool(x: &[f64], [n, c, h, w]: [usize; 4], k: usize, stride: usize, pad: usize) -> (Vec<f64>, [usize; 4]) {
    let (oh, ow) = ((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        let ix = (xx * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            m = m.max(x[p * h * w + iy as usize * w + ix as usize]);
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    (out, [n, c, oh, ow])
}

/// Bilinear resize from the source-coordinate formula of each convention.
pub fn resize(x: &[f64], [n, c, h, w]: [usize; 4], oh: usize, ow: usize, align_corners: bool) -> Vec<f64> {
    let src = |d: usize, fin: usize, fout: usize| -> f64 {
        if align_corners {
            if fout > 1 {
                d as f64 * (fin - 1) as f64 / (fout - 1) as f64
            } else {
                0.0
            }
        } else {
            ((d as f64 + 0.5) * fin as f64 / fout as f64 - 0.5).max(0.0)
        }
    };
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let at = |yy: usize, xx: usize| x[p * h * w + yy.min(h - 1) * w + xx.min(w - 1)];
        for oy in 0..oh {
            let sy = src(oy, h, oh);
            let y0 = (sy.floor() as usize).min(h - 1);
            let fy = sy - y0 as f64;
            for ox in 0..ow {
                let sx = src(ox, w, ow);
                let x0 = (sx.floor() as usize).min(w - 1);
                let fx = sx - x0 as f64;
                out.push(
                    at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                        + at(y0, x0 + 1) * (1.0 - fy) * fx
                        + at(y0 + 1, x0) * fy * (1.0 - fx)
                        + at(y0 + 1, x0 + 1) * fy * fx,
                );
            }
        }
    }
    out
}

pub fn crop(x: &[f64], [n, c, h, w]: [usize; 4], y0: usize, x0: usize, ch: usize, cw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * c * ch * cw);
    for p in 0..n * c {
        for y in 0..ch {
            for xx in 0..cw {
                out.push(x[p * h * w + (y0 + y) * w + x0 + xx]);
            }
        }
    }
    out
}

pub fn constant_pad(x: &[f64], [n, c, h, w]: [usize; 4], pad: usize, value: f64) -> Vec<f64> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Vec::with_capacity(n * c * ph * pw);
    for p in 0..n * c {
        for y in 0..ph {
            for xx in 0..pw {
                let inside = y >= pad && xx >= pad && y < pad + h && xx < pad + w;
                out.push(if inside { x[p * h * w + (y - pad) * w + xx - pad] } else { value });
            }
        }
    }
    out
}

/// Mirror index without repeating the edge sample.
pub fn mirror(i: isize, n: usize) -> usize {
    let period = 2 * (n as isize - 1);
    if period == 0 {
        return 0;
    }
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

pub fn reflection_pad(x: &[f64], [n, c, h, w]: [usize; 4], pad: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Vec::with_capacity(n * c * ph * pw);
    for p in 0..n * c {
        for y in 0..ph {
            for xx in 0..pw {
                let sy = mirror(y as isize - pad as isize, h);
                let sx = mirror(xx as isize - pad as isize, w);
                out.push(x[p * h * w + sy * w + sx]);
            }
        }
    }
    out
}

/// Rank by counting: `1 + #smaller + (#equal − 1) / 2`.
pub fn counting_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let eq = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + less + (eq - 1.0) / 2.0
        })
        .collect()
}

/// Pearson from raw sums, a different evaluation order from the library.
pub fn sums_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

/// `1 − 6Σd²/(n(n²−1))` for tie-free data.
pub fn spearman_d2(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (counting_ranks(x), counting_ranks(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..n {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// One-way ANOVA F from textbook sums of squares, with its degrees of
/// freedom.
pub fn anova_ss(groups: &[Vec<f64>]) -> (f64, usize, usize) {
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let total: f64 = all.iter().sum();
    let correction = total * total / all.len() as f64;
    let sst = all.iter().map(|v| v * v).sum::<f64>() - correction;
    let ssb = groups
        .iter()
        .map(|g| g.iter().sum::<f64>().powi(2) / g.len() as f64)
        .sum::<f64>()
        - correction;
    let ssw = sst - ssb;
    let (dfb, dfw) = (groups.len() - 1, all.len() - groups.len());
    ((ssb / dfb as f64) / (ssw / dfw as f64), dfb, dfw)
}
