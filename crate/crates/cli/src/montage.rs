// SPDX-License-Identifier: MIT OR Apache-2.0

//! Channel montages: center FZ | channel FZ | 3×3 top-image grid per row,
//! with the row label and measurements drawn above it.

use std::io::BufWriter;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use resstream::sweep::TOP_K;

use crate::config::ArtifactHeader;
use crate::error::{CliError, CliResult};
use crate::font::{self, GLYPH_H};

/// Side of one top-image cell.
pub const TILE: u32 = 48;
/// Side of each of the three panels in a row.
pub const PANEL: u32 = 3 * TILE;
pub const GAP: u32 = 6;
const TEXT_SCALE: usize = 2;
const LINE_H: u32 = (GLYPH_H * TEXT_SCALE) as u32 + 4;
/// Text lines above each row.
const TEXT_LINES: u32 = 2;

pub const WIDTH: u32 = 4 * GAP + 3 * PANEL;
pub const ROW_H: u32 = TEXT_LINES * LINE_H + PANEL + 2 * GAP;

pub const MISSING_NOTE: &str = "corpus not mined";

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([20, 20, 20]);
const PLACEHOLDER: Rgb<u8> = Rgb([200, 200, 200]);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub m: f64,
    pub delta_up: f64,
    pub delta_down: f64,
}

impl Annotation {
    pub fn text(&self) -> String {
        format!("M={:.3} dU={:+.3} dD={:+.3}", self.m, self.delta_up, self.delta_down)
    }
}

#[derive(Debug, Clone)]
pub struct MontageRow {
    pub label: String,
    pub center: RgbImage,
    pub channel: RgbImage,
    /// Present only after a top-9 mining pass.
    pub top9: Option<Vec<RgbImage>>,
    pub annotation: Option<Annotation>,
}

pub fn montage_height(rows: usize) -> u32 {
    GAP + rows as u32 * ROW_H
}

fn draw_text(canvas: &mut RgbImage, text: &str, x: u32, y: u32, scale: usize) {
    let (w, h) = canvas.dimensions();
    font::render(text, x as usize, y as usize, scale, |px, py| {
        if (px as u32) < w && (py as u32) < h {
            canvas.put_pixel(px as u32, py as u32, INK);
        }
    });
}

fn fill(canvas: &mut RgbImage, x: u32, y: u32, w: u32, h: u32, color: Rgb<u8>) {
    for py in y..y + h {
        for px in x..x + w {
            canvas.put_pixel(px, py, color);
        }
    }
}

/// Largest centered square, resized to `side`.
pub fn square(img: &RgbImage, side: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let s = w.min(h);
    let crop = imageops::crop_imm(img, (w - s) / 2, (h - s) / 2, s, s).to_image();
    if s == side {
        crop
    } else {
        imageops::resize(&crop, side, side, FilterType::Triangle)
    }
}

/// Fixed-layout montage; the height depends only on the number of rows.
pub fn montage(rows: &[MontageRow]) -> RgbImage {
    let mut canvas = RgbImage::from_pixel(WIDTH, montage_height(rows.len()), BACKGROUND);
    for (i, row) in rows.iter().enumerate() {
        let top = GAP + i as u32 * ROW_H;
        draw_text(&mut canvas, &row.label, GAP, top, TEXT_SCALE);
        if let Some(a) = &row.annotation {
            draw_text(&mut canvas, &a.text(), GAP, top + LINE_H, TEXT_SCALE);
        }
        let py = top + TEXT_LINES * LINE_H;
        let x = |k: u32| GAP + k * (PANEL + GAP);
        imageops::replace(&mut canvas, &square(&row.center, PANEL), x(0).into(), py.into());
        imageops::replace(&mut canvas, &square(&row.channel, PANEL), x(1).into(), py.into());
        let cells = row.top9.as_deref().unwrap_or(&[]);
        for k in 0..TOP_K as u32 {
            let (cx, cy) = (x(2) + (k % 3) * TILE, py + (k / 3) * TILE);
            match cells.get(k as usize) {
                Some(img) => imageops::replace(&mut canvas, &square(img, TILE), cx.into(), cy.into()),
                None => fill(&mut canvas, cx + 1, cy + 1, TILE - 2, TILE - 2, PLACEHOLDER),
            }
        }
        if row.top9.is_none() {
            let tw = font::text_width(MISSING_NOTE, 1) as u32;
            draw_text(&mut canvas, MISSING_NOTE, x(2) + (PANEL - tw) / 2, py + PANEL / 2 - 3, 1);
        }
    }
    canvas
}

/// Keyword of the iTXt chunk holding the artifact header.
pub const HEADER_KEY: &str = "resstream-header";

/// PNG with the artifact header embedded as text chunks.
pub fn write_png(path: &Path, img: &RgbImage, header: &ArtifactHeader) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width(), img.height());
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk("Comment".into(), header.summary())?;
    enc.add_itxt_chunk(HEADER_KEY.into(), serde_json::to_string(header)?)?;
    let mut w = enc.write_header()?;
    w.write_image_data(img.as_raw())?;
    w.finish()?;
    Ok(())
}
