// SPDX-License-Identifier: MIT OR Apache-2.0

//! Content-addressed on-disk FZ store.
//!
//! Each entry is `<key>.json` (metadata), `<key>.f32` (the image as raw
//! little-endian floats, bit-exact) and `<key>.png` (8-bit preview).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::FzConfig;
use super::optimize::{visualize, FeatureModel, FzMeta, FzResult, Objective};
use crate::digest::{fields_hash, sha256_hex};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Overrides the cache directory chosen by callers.
pub const CACHE_DIR_ENV: &str = "RESSTREAM_CACHE_DIR";
const FORMAT: &str = "resstream-fz/1";

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    key: String,
    image_sha256: String,
    meta: FzMeta,
}

#[derive(Debug, Clone)]
pub struct FzCache {
    dir: PathBuf,
}

impl FzCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    /// `$RESSTREAM_CACHE_DIR` if set, else `default`.
    pub fn from_env_or(default: impl Into<PathBuf>) -> Result<Self> {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => Self::new(PathBuf::from(d)),
            _ => Self::new(default),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(
        weights_hash: &str,
        target: &str,
        channel: usize,
        objective: Objective,
        config: &FzConfig,
    ) -> String {
        fields_hash([
            weights_hash.as_bytes(),
            target.as_bytes(),
            &(channel as u64).to_le_bytes()[..],
            objective.as_str().as_bytes(),
            config.config_hash().as_bytes(),
            &config.seed.to_le_bytes()[..],
        ])
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf, PathBuf) {
        (
            self.dir.join(format!("{key}.json")),
            self.dir.join(format!("{key}.f32")),
            self.dir.join(format!("{key}.png")),
        )
    }

    pub fn load(&self, key: &str) -> Result<Option<FzResult>> {
        let (json, raw, _) = self.paths(key);
        if !json.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        if side.format != FORMAT || side.key != key {
            return Err(Error::Manifest(format!("cache entry {key} has a foreign header")));
        }
        let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
        if sha256_hex(&bytes) != side.image_sha256 {
            return Err(Error::Checksum(format!("cached FZ image {key}")));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let image = Tensor::new(side.meta.image_shape.clone(), data)?;
        Ok(Some(FzResult { meta: side.meta, image }))
    }

    pub fn store(&self, key: &str, fz: &FzResult) -> Result<()> {
        let (json, raw, png) = self.paths(key);
        let bytes: Vec<u8> = fz.image.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        write_atomic(&raw, &bytes)?;
        let side = Sidecar {
            format: FORMAT.into(),
            key: key.into(),
            image_sha256: sha256_hex(&bytes),
            meta: fz.meta.clone(),
        };
        let preview = to_rgb8(&fz.image)?;
        preview
            .save(&png)
            .map_err(|e| Error::io(&png, std::io::Error::other(e)))?;
        write_atomic(&json, serde_json::to_string_pretty(&side)?.as_bytes())
    }

    /// Cached result, or optimise and store. The flag reports a hit.
    pub fn get_or_compute<T: Scalar, M: FeatureModel<T> + ?Sized>(
        &self,
        model: &M,
        channel: usize,
        objective: Objective,
        config: &FzConfig,
    ) -> Result<(FzResult, bool)> {
        let key = Self::key(model.weights_hash(), &model.target(), channel, objective, config);
        if let Some(hit) = self.load(&key)? {
            return Ok((hit, true));
        }
        log::info!("computing FZ {} channel {channel} ({objective})", model.target());
        let fz = visualize(model, channel, objective, config)?;
        self.store(&key, &fz)?;
        Ok((fz, false))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// `1×3×H×W` in `[0,1]` → 8-bit RGB.
pub fn to_rgb8(image: &Tensor<f32>) -> Result<image::RgbImage> {
    let [_, c, h, w] = image.dims4("to_rgb8")?;
    if c != 3 {
        return Err(Error::invalid("to_rgb8", format!("{c} channels")));
    }
    let plane = h * w;
    let d = image.data();
    let mut buf = Vec::with_capacity(plane * 3);
    for p in 0..plane {
        for ch in 0..3 {
            buf.push((d[ch * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(image::RgbImage::from_raw(w as u32, h as u32, buf).expect("sized buffer"))
}
