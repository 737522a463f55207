// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hand-written SVG plots. Every file is standalone: inline styles, no
//! external fonts or images, provenance in a `<metadata>` element.

use std::fmt::Write as _;

use resstream::metrics::{MAX_MIX, MIX_BAND};
use resstream::resnet::BlockRef;
use resstream::stats::CorrelationResult;
use resstream::sweep::{GroupComparison, InhibitionReport, MagnitudeReport, HISTOGRAM_STEP};

use crate::config::ArtifactHeader;

pub const PURPLE: &str = "#7b3fa0";
pub const YELLOW: &str = "#e8c320";
const SKIP_COLOR: &str = "#1f77b4";
const OVERWRITE_COLOR: &str = "#d62728";

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 44.0;

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), fmt_num)
}

/// Linear map from data range to pixel range.
#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    p0: f64,
    p1: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, p0: f64, p1: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self { lo, hi, p0, p1 }
    }

    fn fit(values: impl IntoIterator<Item = f64>, p0: f64, p1: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Self::new(0.0, 1.0, p0, p1);
        }
        let pad = (hi - lo) * 0.05;
        Self::new(lo - pad, hi + pad, p0, p1)
    }

    fn px(&self, v: f64) -> f64 {
        self.p0 + (v - self.lo) / (self.hi - self.lo) * (self.p1 - self.p0)
    }

    /// Round tick values inside the range, about `n` intervals apart.
    fn ticks(&self, n: usize) -> Vec<f64> {
        let raw = (self.hi - self.lo) / n as f64;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|k| k * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let first = (self.lo / step).ceil() as i64;
        let last = (self.hi / step).floor() as i64;
        (first..=last).map(|i| i as f64 * step).collect()
    }
}

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Self {
            body: String::new(),
            width,
            height,
        }
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, size: f64, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="{size}">{}</text>"#,
            escape(s)
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
            w.max(0.0),
            h.max(0.0)
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, dash: bool) {
        let dash = if dash { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}"{dash}/>"#
        );
    }

    fn circle(&mut self, x: f64, y: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{fill}" fill-opacity="0.7"/>"#
        );
    }

    /// Frame, ticks and labels of a panel whose plot area is given by `x`/`y`.
    fn axes(&mut self, x: &Axis, y: &Axis, xlabel: &str, ylabel: &str, xticks: &[f64]) {
        let (l, r, t, b) = (x.p0, x.p1, y.p1, y.p0);
        let _ = writeln!(
            self.body,
            r##"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
            r - l,
            b - t
        );
        for &v in xticks {
            let px = x.px(v);
            self.line(px, b, px, b + 4.0, "#333", false);
            self.text(px, b + 16.0, "middle", 10.0, &fmt_num(v));
        }
        for v in y.ticks(4) {
            let py = y.px(v);
            self.line(l - 4.0, py, l, py, "#333", false);
            self.text(l - 6.0, py + 3.0, "end", 10.0, &fmt_num(v));
        }
        self.text((l + r) / 2.0, b + 34.0, "middle", 12.0, xlabel);
        let cy = (t + b) / 2.0;
        let _ = writeln!(
            self.body,
            r#"<text x="{:.1}" y="{cy:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 {:.1} {cy:.1})">{}</text>"#,
            l - 40.0,
            l - 40.0,
            escape(ylabel)
        );
    }

    fn finish(self, title: &str, header: &ArtifactHeader) -> String {
        let meta = serde_json::to_string(header).expect("header serialises");
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
             <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" \
             font-family=\"sans-serif\">\n\
             <title>{t}</title>\n<metadata>{m}</metadata>\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n",
            w = self.width,
            h = self.height,
            t = escape(title),
            m = escape(&meta),
            body = self.body
        )
    }
}

fn panel_axes(col: usize, x: Axis, y: Axis) -> (Axis, Axis) {
    let ox = col as f64 * PANEL_W;
    (
        Axis::new(x.lo, x.hi, ox + MARGIN_L, ox + PANEL_W - 16.0),
        Axis::new(y.lo, y.hi, PANEL_H - MARGIN_B, MARGIN_T),
    )
}

/// Mix-ratio histogram of one block with the mix band shaded.
pub fn histogram_svg(block: BlockRef, counts: &[u64], header: &ArtifactHeader) -> String {
    let mut svg = Svg::new(PANEL_W + 40.0, PANEL_H);
    let total: u64 = counts.iter().sum();
    let ymax = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let (x, y) = panel_axes(0, Axis::new(0.0, MAX_MIX, 0.0, 0.0), Axis::new(0.0, ymax * 1.1, 0.0, 0.0));
    let x = Axis { p1: x.p1 + 40.0, ..x };
    svg.rect(x.px(MIX_BAND.0), y.p1, x.px(MIX_BAND.1) - x.px(MIX_BAND.0), y.p0 - y.p1, "#eeeeee");
    for (i, &c) in counts.iter().enumerate() {
        let lo = i as f64 * HISTOGRAM_STEP;
        let (x0, x1) = (x.px(lo), x.px(lo + HISTOGRAM_STEP));
        let top = y.px(c as f64);
        svg.rect(x0 + 0.5, top, x1 - x0 - 1.0, y.p0 - top, "#4c72b0");
    }
    svg.line(x.px(1.0), y.p1, x.px(1.0), y.p0, "#333", true);
    let ticks: Vec<f64> = (0..=5).map(f64::from).collect();
    svg.axes(&x, &y, "mix ratio M", "channels", &ticks);
    let title = format!("Block {block}: mix ratio histogram (n = {total})");
    svg.text((x.p0 + x.p1) / 2.0, 20.0, "middle", 13.0, &title);
    svg.finish(&title, header)
}

/// Per-block pass percentages: all three criteria (purple) and without the
/// mix criterion (yellow).
pub fn pass_bars_svg(bars: &[(BlockRef, f64, f64)], header: &ArtifactHeader) -> String {
    let group = 56.0;
    let width = MARGIN_L + group * bars.len().max(1) as f64 + 130.0;
    let mut svg = Svg::new(width, PANEL_H);
    let ymax = bars.iter().map(|b| b.1.max(b.2)).fold(0.0, f64::max).max(1.0) * 1.15;
    let x = Axis::new(0.0, bars.len().max(1) as f64, MARGIN_L, MARGIN_L + group * bars.len().max(1) as f64);
    let y = Axis::new(0.0, ymax, PANEL_H - MARGIN_B, MARGIN_T);
    for (i, (block, all, no_mix)) in bars.iter().enumerate() {
        let x0 = x.px(i as f64) + 8.0;
        let bw = (group - 16.0) / 2.0;
        svg.rect(x0, y.px(*all), bw, y.p0 - y.px(*all), PURPLE);
        svg.rect(x0 + bw, y.px(*no_mix), bw, y.p0 - y.px(*no_mix), YELLOW);
        svg.text(x0 + bw, y.p0 + 16.0, "middle", 10.0, &block.to_string());
        svg.text(x0 + bw / 2.0, y.px(*all) - 3.0, "middle", 8.0, &fmt_num(*all));
        svg.text(x0 + 1.5 * bw, y.px(*no_mix) - 3.0, "middle", 8.0, &fmt_num(*no_mix));
    }
    svg.axes(&x, &y, "block", "channels passing (%)", &[]);
    let lx = x.p1 + 12.0;
    svg.rect(lx, MARGIN_T, 10.0, 10.0, PURPLE);
    svg.text(lx + 14.0, MARGIN_T + 9.0, "start", 10.0, "all criteria");
    svg.rect(lx, MARGIN_T + 16.0, 10.0, 10.0, YELLOW);
    svg.text(lx + 14.0, MARGIN_T + 25.0, "start", 10.0, "mix omitted");
    let title = "Scale-invariance pass percentage per block";
    svg.text(width / 2.0, 20.0, "middle", 13.0, title);
    svg.finish(title, header)
}

fn correlation_note(c: &CorrelationResult) -> String {
    format!("rho = {}, p = {}, n = {}", fmt_opt(c.rho), fmt_opt(c.p_value), c.n)
}

fn scatter_panel(
    svg: &mut Svg,
    col: usize,
    points: &[(f64, f64, &'static str)],
    xlabel: &str,
    ylabel: &str,
    note: &str,
) -> (Axis, Axis) {
    let x = Axis::new(0.0, MAX_MIX, 0.0, 0.0);
    let y = Axis::fit(points.iter().map(|p| p.1), 0.0, 0.0);
    let (x, y) = panel_axes(col, x, y);
    for &(px, py, color) in points {
        if py.is_finite() {
            svg.circle(x.px(px), y.px(py), color);
        }
    }
    let ticks: Vec<f64> = (0..=5).map(f64::from).collect();
    svg.axes(&x, &y, xlabel, ylabel, &ticks);
    svg.text(x.p1 - 4.0, y.p1 + 14.0, "end", 10.0, note);
    (x, y)
}

/// Weight magnitudes of a block against M, with rank-correlation notes.
pub fn magnitude_svg(report: &MagnitudeReport, header: &ArtifactHeader) -> String {
    let mut svg = Svg::new(2.0 * PANEL_W, PANEL_H);
    let gamma: Vec<_> = report.rows.iter().map(|r| (r.m, r.bn2_gamma_abs, "#4c72b0")).collect();
    let conv: Vec<_> = report.rows.iter().map(|r| (r.m, r.conv2_mean_abs, "#4c72b0")).collect();
    scatter_panel(&mut svg, 0, &gamma, "mix ratio M", "|bn2 gamma|", &correlation_note(&report.bn2_vs_m));
    scatter_panel(&mut svg, 1, &conv, "mix ratio M", "mean |conv2 w|", &correlation_note(&report.conv2_vs_m));
    let title = format!("Block {}: second-layer weight magnitude vs M", report.block);
    svg.text(PANEL_W, 18.0, "middle", 13.0, &title);
    svg.finish(&title, header)
}

fn group_color(m: f64) -> &'static str {
    if m > 1.0 {
        SKIP_COLOR
    } else if m < 1.0 {
        OVERWRITE_COLOR
    } else {
        "#777777"
    }
}

fn group_means(svg: &mut Svg, x: &Axis, y: &Axis, g: &GroupComparison) {
    for (mean, color) in [(g.skip_mean, SKIP_COLOR), (g.overwrite_mean, OVERWRITE_COLOR)] {
        if let Some(v) = mean.filter(|v| v.is_finite()) {
            let py = y.px(v).clamp(y.p1, y.p0);
            svg.line(x.p0, py, x.p1, py, color, true);
        }
    }
}

fn anova_note(g: &GroupComparison) -> String {
    match &g.anova {
        Some(a) if a.infinite_f => format!("F = inf, p = {}", fmt_num(a.p_value)),
        Some(a) => format!("F = {}, p = {}", fmt_num(a.f), fmt_num(a.p_value)),
        None => format!("skip n = {}, overwrite n = {}", g.skip_n, g.overwrite_n),
    }
}

/// Block activation of Input FZs and B-vs-I rank correlations against M,
/// coloured by group with dashed group means.
pub fn inhibition_svg(report: &InhibitionReport, header: &ArtifactHeader) -> String {
    let mut svg = Svg::new(2.0 * PANEL_W, PANEL_H + 14.0);
    let act: Vec<_> = report.channels.iter().map(|c| (c.m, c.b_of_xi, group_color(c.m))).collect();
    let rho: Vec<_> = report
        .channels
        .iter()
        .filter_map(|c| c.rho.map(|r| (c.m, r, group_color(c.m))))
        .collect();
    let (x, y) = scatter_panel(&mut svg, 0, &act, "mix ratio M", "B(x_I)", &anova_note(&report.activations));
    group_means(&mut svg, &x, &y, &report.activations);
    let (x, y) = scatter_panel(&mut svg, 1, &rho, "mix ratio M", "rho(B, I)", &anova_note(&report.correlations));
    group_means(&mut svg, &x, &y, &report.correlations);
    let corpus = format!(
        "corpus: {} of {} images{}",
        report.images_used,
        report.corpus_size,
        if report.reduced_corpus { " (reduced corpus)" } else { "" }
    );
    svg.text(PANEL_W, PANEL_H + 8.0, "middle", 10.0, &corpus);
    let title = format!("Block {}: inhibition of the input by the block", report.block);
    svg.text(PANEL_W, 18.0, "middle", 13.0, &title);
    svg.finish(&title, header)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_are_compact() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.5), "1.5");
        assert_eq!(fmt_num(2.0), "2");
        assert_eq!(fmt_num(0.001234), "1.23e-3");
        assert_eq!(fmt_opt(None), "n/a");
    }

    #[test]
    fn ticks_are_round() {
        let a = Axis::new(-0.13, 1.24, 0.0, 1.0);
        assert_eq!(a.ticks(4), vec![0.0, 0.5, 1.0]);
        let b = Axis::new(0.0, 15.4, 0.0, 1.0);
        assert_eq!(b.ticks(4), vec![0.0, 5.0, 10.0, 15.0]);
    }

    #[test]
    fn escaping() {
        assert_eq!(escape(r#"<a href="x">&</a>"#), "&lt;a href=&quot;x&quot;&gt;&amp;&lt;/a&gt;");
    }
}
