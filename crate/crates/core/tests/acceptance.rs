// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria that depend on the published ImageNet weights read them from
//! `RESSTREAM_WEIGHTS` (export directory or manifest). Without it they are
//! measured on the synthetic fixture weights; those lines are printed but do
//! not decide the exit status, since the claims concern the trained network.
//! `RESSTREAM_ACCEPT_STEPS` and `RESSTREAM_ACCEPT_IMAGE_SIZE` override the FZ
//! configuration (reduced by default without published weights).

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::{fixtures, oracles, random_tensor, rng, ToyNet, FIXTURE_IMAGES};
use rand::Rng;
use resstream::featviz::{FeatureModel, FzCache, FzConfig};
use resstream::metrics::{scale_down, scale_up};
use resstream::resnet::{load_weights, read_tensors, studied_blocks, studied_taps, synthetic_weights, BlockRef, ResNet18, WeightStore, FIXTURE_SEED};
use resstream::stats::{anova_oneway, histogram, spearman};
use resstream::sweep::{weight_magnitude_sweep, BlockSweepReport, ChannelOutcome, Sweeper};
use resstream::tensor::{
    batchnorm_inference, bilinear_resize, center_crop, constant_pad, conv2d, crop, maxpool2d, reflection_pad, rel_err,
    ResizeMode, Tape,
};
use resstream::Tensor;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

// Kernel oracle suite.

const KERNEL_CASES: usize = 128;

fn kernel_suite() -> Verdict {
    let start = Instant::now();
    let mut r = rng(0xACCE);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |k: &'static str, e: f64| {
        let w = worst.entry(k).or_insert(0.0);
        *w = w.max(e);
    };
    for _ in 0..KERNEL_CASES {
        let (n, c, o) = (r.random_range(1..3), r.random_range(1..6), r.random_range(1..6));
        let (kh, kw, pad, stride): (usize, usize, usize, usize) = (r.random_range(1..6), r.random_range(1..6), r.random_range(0..3), r.random_range(1..4));
        let h = kh.saturating_sub(2 * pad).max(1) + r.random_range(0..10);
        let w = kw.saturating_sub(2 * pad).max(1) + r.random_range(0..10);
        let x = random_tensor::<f64>(&mut r, &[n, c, h, w], 1.0);
        let wt = random_tensor::<f64>(&mut r, &[o, c, kh, kw], 1.0);
        let bias: Vec<f64> = (0..o).map(|_| r.random_range(-1.0..1.0)).collect();
        let y = conv2d(&x, &wt, Some(&bias), stride, pad).unwrap();
        let (want, shape) = oracles::conv(x.data(), [n, c, h, w], wt.data(), [o, kh, kw], &bias, stride, pad);
        assert_eq!(y.shape(), &shape[..]);
        note("conv", rel_err(y.data(), &want));
    }
    for i in 0..KERNEL_CASES {
        let dims = [r.random_range(1..3), r.random_range(1..4), r.random_range(1..13), r.random_range(1..13)];
        let [_, c, h, w] = dims;
        let x = random_tensor::<f64>(&mut r, &dims, 2.0);
        let g: Vec<f64> = (0..c).map(|_| r.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
        let m: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..c).map(|_| r.random_range(0.05..3.0)).collect();
        let y = batchnorm_inference(&x, &g, &b, &m, &v, 1e-5).unwrap();
        note("bn", rel_err(y.data(), &oracles::batchnorm(x.data(), c, h * w, &g, &b, &m, &v, 1e-5)));

        let k = r.random_range(1..5usize);
        let pad = r.random_range(0..3usize).min(k / 2);
        let stride = r.random_range(1..4);
        if h + 2 * pad >= k && w + 2 * pad >= k {
            let y = maxpool2d(&x, k, stride, pad).unwrap().output;
            let (want, shape) = oracles::maxpool(x.data(), dims, k, stride, pad);
            assert_eq!(y.shape(), &shape[..]);
            note("pool", rel_err(y.data(), &want));
        }

        let (oh, ow) = (r.random_range(1..17), r.random_range(1..17));
        let align = i % 2 == 0;
        let mode = if align { ResizeMode::AlignCorners } else { ResizeMode::HalfPixel };
        let y = bilinear_resize(&x, oh, ow, mode).unwrap();
        note("resize", rel_err(y.data(), &oracles::resize(x.data(), dims, oh, ow, align)));

        let (ch, cw) = (r.random_range(1..=h), r.random_range(1..=w));
        let (y0, x0) = (r.random_range(0..=h - ch), r.random_range(0..=w - cw));
        let y = crop(&x, y0, x0, ch, cw).unwrap();
        note("crop", rel_err(y.data(), &oracles::crop(x.data(), dims, y0, x0, ch, cw)));
        let s = h.min(w);
        let y = center_crop(&x, s).unwrap();
        note("crop", rel_err(y.data(), &oracles::crop(x.data(), dims, (h - s) / 2, (w - s) / 2, s, s)));
        let p = r.random_range(0..6);
        let y = constant_pad(&x, p, 0.5).unwrap();
        note("pad", rel_err(y.data(), &oracles::constant_pad(x.data(), dims, p, 0.5)));
        if p < h && p < w {
            let y = reflection_pad(&x, p).unwrap();
            note("pad", rel_err(y.data(), &oracles::reflection_pad(x.data(), dims, p)));
        }
    }
    let elapsed = start.elapsed();
    let max = worst.values().copied().fold(0.0, f64::max);
    let parts: Vec<String> = worst.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect();
    verdict(
        max <= 1e-5 && within(elapsed, Duration::from_secs(60)),
        format!("{KERNEL_CASES} random shapes per kernel, max rel err {max:.1e} ({}), {:.1} s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

// Gradient check.

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let net = ToyNet::<f64>::two_conv(3, 5, 4);
    let mut r = rng(11);
    let x = random_tensor::<f64>(&mut r, &[1, 3, 9, 10], 1.0);
    let loss_grad = |x: &Tensor<f64>, g: Option<&Tensor<f64>>| -> (f64, Option<Tensor<f64>>, Tensor<f64>) {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = net.objective(&mut tape, xv).unwrap();
        let out = tape.value(y).clone();
        let Some(g) = g else { return (0.0, None, out) };
        let loss = out.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let mut grads = tape.backward(y, g.clone()).unwrap();
        (loss, grads.take(xv), out)
    };
    let shape = loss_grad(&x, None).2.shape().to_vec();
    let g = random_tensor::<f64>(&mut r, &shape, 1.0);
    let grad = loss_grad(&x, Some(&g)).1.unwrap();
    let h = 1e-5;
    let fd: Vec<f64> = (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let up = loss_grad(&p, Some(&g)).0;
            p.data_mut()[i] -= 2.0 * h;
            let down = loss_grad(&p, Some(&g)).0;
            (up - down) / (2.0 * h)
        })
        .collect();
    let err = rel_err(grad.data(), &fd);
    let elapsed = start.elapsed();
    verdict(
        err <= 1e-4 && within(elapsed, Duration::from_secs(60)),
        format!("2-conv toy net, f64, h = 1e-5, {} inputs, rel err {err:.1e}, {:.1} s", x.len(), elapsed.as_secs_f64()),
    )
}

// Forward parity.

fn forward_parity() -> Verdict {
    let start = Instant::now();
    let net = ResNet18::<f32>::new(&synthetic_weights(FIXTURE_SEED)).unwrap();
    let taps = studied_taps();
    let mut worst = 0.0f64;
    let mut compared = 0;
    for name in FIXTURE_IMAGES {
        let file = read_tensors(&fixtures().join(name)).unwrap();
        let acts = net.activations(file.get("input").unwrap(), &taps).unwrap();
        for tap in &taps {
            let want = file.get(&tap.to_string()).unwrap();
            worst = worst.max(f64::from(acts.get(*tap).unwrap().max_abs_diff(want)));
            compared += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        taps.len() == 21 && compared == 63 && worst <= 1e-3 && within(elapsed, Duration::from_secs(120)),
        format!(
            "{} taps x {} fixture images, max abs diff {worst:.1e}, {:.1} s (fixture weights)",
            taps.len(),
            FIXTURE_IMAGES.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// Stats oracles.

fn stats_oracles() -> Verdict {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let mut sp = 0.0f64;
    let mut perms = 0;
    for n in 3..=8 {
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 1.7).sin() * 10.0).collect();
        for perm in oracles::permutations(n) {
            let y: Vec<f64> = perm.iter().map(|&i| i as f64 * 3.0 - 1.0).collect();
            sp = sp.max(rel(spearman(&x, &y).unwrap().rho.unwrap(), oracles::spearman_d2(&x, &y)));
            perms += 1;
        }
    }
    let mut r = rng(5);
    let mut an = 0.0f64;
    for _ in 0..500 {
        let k = r.random_range(2..=4);
        let groups: Vec<Vec<f64>> = (0..k)
            .map(|g| (0..r.random_range(2..=9)).map(|_| r.random_range(-3.0..3.0) + g as f64 * 0.5).collect())
            .collect();
        let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
        let (f, _, _) = oracles::anova_ss(&groups);
        an = an.max(rel(anova_oneway(&refs).unwrap().f, f));
    }
    // Closed top bin: 5.0 lands in the last bin; edges open their own bin.
    let h = histogram(&[0.0, 0.2499999, 0.25, 4.75, 4.9999, 5.0, 5.0000001, -0.001], 0.0, 5.0, 0.25).unwrap();
    let mut want = vec![0u64; 20];
    want[0] = 2;
    want[1] = 1;
    want[19] = 3;
    let edges: Vec<f64> = (0..=20).map(|k| k as f64 * 0.25).collect();
    let mut edge_want = vec![1u64; 20];
    edge_want[19] = 2;
    let bins_exact = h == want && histogram(&edges, 0.0, 5.0, 0.25).unwrap() == edge_want;
    verdict(
        sp <= 1e-10 && an <= 1e-10 && bins_exact,
        format!(
            "spearman over {perms} permutations (n = 3..8) rel err {sp:.1e}, anova F over 500 group sets rel err {an:.1e}, histogram bins exact: {bins_exact}"
        ),
    )
}

// Transform fixtures.

#[derive(serde::Deserialize)]
struct TransformFixture {
    shape: Vec<usize>,
    input: Vec<f64>,
    scale_up: Vec<f64>,
    scale_down: Vec<f64>,
}

fn transform_fixtures() -> Verdict {
    let text = std::fs::read_to_string(fixtures().join("transforms/pattern8.json")).unwrap();
    let fx: TransformFixture = serde_json::from_str(&text).unwrap();
    let x = Tensor::new(fx.shape.clone(), fx.input.clone()).unwrap();
    let mismatches = |got: &Tensor<f64>, want: &[f64]| {
        got.data().iter().zip(want).filter(|(a, b)| a.to_bits() != b.to_bits()).count()
            + got.len().abs_diff(want.len())
    };
    let up = mismatches(&scale_up(&x).unwrap(), &fx.scale_up);
    let down = mismatches(&scale_down(&x).unwrap(), &fx.scale_down);
    verdict(
        up == 0 && down == 0,
        format!("{:?} pattern, S: {up} of {} values differ in bits, S^-1: {down}", fx.shape, fx.scale_up.len()),
    )
}

// Weight-dependent criteria.

struct Study {
    net: ResNet18<f32>,
    ws: WeightStore,
    cache: FzCache,
    base: FzConfig,
    published: bool,
    reports: BTreeMap<BlockRef, BlockSweepReport>,
    _tmp: Option<tempfile::TempDir>,
}

fn env_usize(key: &str) -> Option<usize> {
    std::env::var(key).ok().and_then(|v| v.parse().ok())
}

impl Study {
    fn open() -> Self {
        let path = std::env::var_os("RESSTREAM_WEIGHTS").map(PathBuf::from);
        let published = path.is_some();
        let ws = match &path {
            Some(p) => load_weights(p).unwrap_or_else(|e| panic!("RESSTREAM_WEIGHTS={}: {e}", p.display())),
            None => synthetic_weights(FIXTURE_SEED),
        };
        let net = ResNet18::new(&ws).unwrap();
        let (tmp, cache) = match std::env::var_os(resstream::featviz::CACHE_DIR_ENV) {
            Some(d) => (None, FzCache::new(PathBuf::from(d)).unwrap()),
            None => {
                let t = tempfile::tempdir().unwrap();
                let c = FzCache::new(t.path()).unwrap();
                (Some(t), c)
            }
        };
        let (steps, size) = if published { (None, None) } else { (Some(1), Some(32)) };
        let mut base = FzConfig::default();
        if let Some(s) = env_usize("RESSTREAM_ACCEPT_STEPS").or(steps) {
            base = base.with_steps(s);
        }
        if let Some(s) = env_usize("RESSTREAM_ACCEPT_IMAGE_SIZE").or(size) {
            base = base.with_image_size(s);
        }
        Self {
            net,
            ws,
            cache,
            base,
            published,
            reports: BTreeMap::new(),
            _tmp: tmp,
        }
    }

    fn label(&self) -> String {
        let weights = if self.published { "published weights" } else { "synthetic weights, published weights unavailable" };
        let cfg = if self.base.is_reduced() {
            format!("reduced FZ config steps={} size={} px", self.base.steps, self.base.image_size)
        } else {
            "full FZ config".to_string()
        };
        format!("[{weights}; {cfg}]")
    }

    fn sweeper(&self, seed: u64) -> Sweeper<'_> {
        Sweeper::new(&self.net, &self.cache, self.base.clone().with_seed(seed))
    }

    fn report(&mut self, block: BlockRef) -> &BlockSweepReport {
        if !self.reports.contains_key(&block) {
            let r = self.sweeper(0).block_sweep(block).unwrap();
            self.reports.insert(block, r);
        }
        &self.reports[&block]
    }
}

fn b(s: &str) -> BlockRef {
    s.parse().unwrap()
}

fn block_4_1(study: &mut Study) -> Verdict {
    let r = study.report(b("4.1"));
    let pct = 100.0 * r.histogram[0] as f64 / r.width as f64;
    verdict(
        pct >= 95.0,
        format!("{} of {} channels in [0, 0.25) = {pct:.1}% (need >= 95%), {} flagged", r.histogram[0], r.width, r.flagged.len()),
    )
}

fn named_channels(study: &mut Study) -> Verdict {
    let seeds = [0u64, 1, 2];
    let mut m11: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    let mut passes31 = 0;
    for &seed in &seeds {
        let s = study.sweeper(seed);
        for o in s.channel_outcomes(b("1.1"), &[19, 25, 38]).unwrap() {
            match o {
                ChannelOutcome::Measured(r) => m11.entry(r.channel()).or_default().push(Some(r.mix.m)),
                ChannelOutcome::Flagged(f) => m11.entry(f.channel).or_default().push(None),
            }
        }
        for o in s.channel_outcomes(b("3.1"), &[25, 113, 178, 215]).unwrap() {
            if let ChannelOutcome::Measured(r) = o {
                passes31 += usize::from(r.scale.is_scale_invariant());
            }
        }
    }
    let votes = |c: usize, ok: fn(f64) -> bool| m11[&c].iter().filter(|m| m.is_some_and(ok)).count();
    let v38 = votes(38, |m| m < 1.0);
    let v25 = votes(25, |m| m > 1.0);
    let v19 = votes(19, |m| m > 0.5 && m < 2.0);
    let ms = |c: usize| {
        m11[&c]
            .iter()
            .map(|m| m.map_or("flagged".to_string(), |v| format!("{v:.2}")))
            .collect::<Vec<_>>()
            .join("/")
    };
    verdict(
        v38 >= 2 && v25 >= 2 && v19 >= 2 && passes31 >= 6,
        format!(
            "1.1 ch38 M<1 in {v38}/3 (M {}), ch25 M>1 in {v25}/3 (M {}), ch19 M in (1/2, 2) in {v19}/3 (M {}); 3.1 {{25,113,178,215}} pass all criteria in {passes31}/12 runs (need >= 6)",
            ms(38),
            ms(25),
            ms(19)
        ),
    )
}

fn magnitude_trend(study: &mut Study) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["1.1", "2.1", "3.1"] {
        let report = study.report(b(name)).clone();
        let m = match weight_magnitude_sweep(&study.ws, &report) {
            Ok(m) => m,
            Err(e) => {
                ok = false;
                parts.push(format!("{name}: {e}"));
                continue;
            }
        };
        for (what, c) in [("|gamma|", m.bn2_vs_m), ("|conv2 w|", m.conv2_vs_m)] {
            let good = c.rho.is_some_and(|r| r < 0.0) && c.p_value.is_some_and(|p| p < 0.05);
            ok &= good;
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
            parts.push(format!("{name} {what} rho {} p {}", fmt(c.rho), fmt(c.p_value)));
        }
    }
    verdict(ok, format!("{} (need rho < 0, p < 0.05)", parts.join("; ")))
}

fn scale_structure(study: &mut Study) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for block in studied_blocks() {
        let n = study.report(block).invariant_channels().len();
        let expect_zero = matches!(block.to_string().as_str(), "3.0" | "4.0" | "4.1");
        ok &= if expect_zero { n == 0 } else { n > 0 };
        parts.push(format!("{block}: {n}{}", if expect_zero { " (need 0)" } else { " (need > 0)" }));
    }
    verdict(ok, format!("channels passing all criteria: {}", parts.join(", ")))
}

fn yellow_superset(study: &mut Study) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for block in studied_blocks() {
        let r = study.report(block);
        let yellow = r.invariant_channels_without_mix();
        let purple = r.invariant_channels();
        ok &= purple.iter().all(|c| yellow.contains(c)) && r.pass_pct_without_mix >= r.pass_pct_all;
        parts.push(format!("{block}: {}/{}", purple.len(), yellow.len()));
    }
    verdict(ok, format!("purple/yellow counts per block: {}", parts.join(", ")))
}

fn main() {
    let mut out = std::io::stdout();
    let mut hard_failures = 0;
    let mut line = |name: &str, enforced: bool, run: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(&mut *run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass && enforced {
            hard_failures += 1;
        }
        let tag = if v.pass { "PASS" } else { "FAIL" };
        let advisory = if enforced { "" } else { " (advisory)" };
        writeln!(
            out,
            "{tag} {name}{advisory}: {} [{:.1} s]",
            v.detail,
            start.elapsed().as_secs_f64()
        )
        .unwrap();
        out.flush().unwrap();
    };

    line("kernel oracle suite", true, &mut kernel_suite);
    line("gradient check", true, &mut gradient_check);
    line("forward parity", true, &mut forward_parity);
    line("stats oracles", true, &mut stats_oracles);
    line("transform fixtures", true, &mut transform_fixtures);

    let mut study = Study::open();
    let label = study.label();
    let enforced = study.published;
    line(&format!("block 4.1 reproduction {label}"), enforced, &mut || block_4_1(&mut study));
    line(&format!("named-channel reproduction {label}"), enforced, &mut || named_channels(&mut study));
    line(&format!("weight-magnitude trend {label}"), enforced, &mut || magnitude_trend(&mut study));
    line(&format!("scale-sweep structural claims {label}"), enforced, &mut || scale_structure(&mut study));
    line(&format!("scale-sweep yellow-superset invariant {label}"), true, &mut || yellow_superset(&mut study));

    drop(line);
    println!("acceptance: {hard_failures} enforced failure(s)");
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
