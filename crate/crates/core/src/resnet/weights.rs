// SPDX-License-Identifier: MIT OR Apache-2.0

//! Neutral tensor format (`manifest.json` + one little-endian blob) and the
//! validated [`WeightStore`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arch::{parameter_table, ParamKind};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

pub const FORMAT_TAG: &str = "resstream-tensors/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub byte_offset: u64,
    pub byte_len: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_format")]
    pub format: String,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default = "default_blob")]
    pub blob: String,
    #[serde(default)]
    pub model_hash: Option<String>,
    pub tensors: Vec<TensorEntry>,
}

fn default_format() -> String {
    FORMAT_TAG.to_string()
}

fn default_blob() -> String {
    "weights.bin".to_string()
}

/// Resolve a manifest path: either the file itself or its directory.
fn manifest_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    }
}

/// Tensors read from a manifest, in manifest order, plus the blob hash.
#[derive(Debug, Clone)]
pub struct TensorFile {
    pub manifest: Manifest,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub blob_hash: String,
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Read and checksum every tensor of a manifest.
pub fn read_tensors(path: &Path) -> Result<TensorFile> {
    let mpath = manifest_file(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT_TAG {
        return Err(Error::Manifest(format!("unknown format `{}`", manifest.format)));
    }
    let blob_path = mpath.parent().unwrap_or(Path::new(".")).join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        if entry.dtype != DType::F32 {
            return Err(Error::Manifest(format!("tensor `{}`: only f32 is stored", entry.name)));
        }
        let start = entry.byte_offset as usize;
        let end = start
            .checked_add(entry.byte_len as usize)
            .filter(|&e| e <= blob.len())
            .ok_or_else(|| Error::Manifest(format!("tensor `{}` runs past the blob", entry.name)))?;
        let raw = &blob[start..end];
        if sha256_hex(raw) != entry.sha256 {
            return Err(Error::Checksum(entry.name.clone()));
        }
        let n: usize = entry.shape.iter().product();
        if raw.len() != n * 4 {
            return Err(Error::Manifest(format!(
                "tensor `{}`: {} bytes for shape {:?}",
                entry.name,
                raw.len(),
                entry.shape
            )));
        }
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)?));
    }
    Ok(TensorFile {
        manifest,
        tensors,
        blob_hash: sha256_hex(&blob),
    })
}

/// Write tensors in manifest order into `dir/manifest.json` + `dir/<blob>`.
pub fn write_tensors<'a>(
    dir: &Path,
    blob_name: &str,
    source: Option<&str>,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in tensors {
        let start = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let raw = &blob[start..];
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: DType::F32,
            byte_offset: start as u64,
            byte_len: raw.len() as u64,
            sha256: sha256_hex(raw),
        });
    }
    let manifest = Manifest {
        format: FORMAT_TAG.to_string(),
        source: source.map(str::to_string),
        blob: blob_name.to_string(),
        model_hash: Some(sha256_hex(&blob)),
        tensors: entries,
    };
    let blob_path = dir.join(blob_name);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let mpath = dir.join("manifest.json");
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

/// Every ResNet18 tensor by canonical name. Immutable once built.
#[derive(Debug, Clone)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor<f32>>,
    hash: String,
}

impl WeightStore {
    /// Validate a name→tensor map against the architecture table.
    pub fn from_tensors(tensors: BTreeMap<String, Tensor<f32>>, hash: String) -> Result<Self> {
        let table = parameter_table();
        for entry in &table {
            match tensors.get(&entry.name) {
                None => return Err(Error::MissingTensor(entry.name.clone())),
                Some(t) if t.shape() != entry.shape.as_slice() => {
                    return Err(Error::WeightShape {
                        name: entry.name.clone(),
                        expected: entry.shape.clone(),
                        found: t.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = tensors.keys().find(|k| !table.iter().any(|s| &s.name == *k)) {
            return Err(Error::UnexpectedTensor(extra.clone()));
        }
        Ok(Self { tensors, hash })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Content hash (sha256 of the tensors in canonical order).
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors.len()
    }

    /// Learnable parameter tensors (conv/fc weights and biases, BN affine).
    pub fn parameter_count(&self) -> usize {
        parameter_table()
            .iter()
            .filter(|s| s.kind.is_learnable())
            .count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        parameter_table()
            .into_iter()
            .map(move |s| {
                let (k, v) = self.tensors.get_key_value(&s.name).expect("validated");
                (k.as_str(), v)
            })
            .collect::<Vec<_>>()
            .into_iter()
    }

    /// A copy with one tensor replaced; re-validated and re-hashed.
    pub fn with_tensor(&self, name: &str, tensor: Tensor<f32>) -> Result<Self> {
        let mut tensors = self.tensors.clone();
        tensors.insert(name.to_string(), tensor);
        let hash = content_hash(&tensors);
        Self::from_tensors(tensors, hash)
    }

    /// Export in the neutral format.
    pub fn save(&self, dir: &Path, source: Option<&str>) -> Result<Manifest> {
        write_tensors(dir, "weights.bin", source, self.iter())
    }
}

fn content_hash(tensors: &BTreeMap<String, Tensor<f32>>) -> String {
    let mut h = Sha256::new();
    for entry in parameter_table() {
        if let Some(t) = tensors.get(&entry.name) {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

/// Load and validate a weight export.
pub fn load_weights(manifest_path: &Path) -> Result<WeightStore> {
    let file = read_tensors(manifest_path)?;
    let mut map = BTreeMap::new();
    for (name, t) in file.tensors {
        if map.insert(name.clone(), t).is_some() {
            return Err(Error::Manifest(format!("duplicate tensor `{name}`")));
        }
    }
    let hash = content_hash(&map);
    WeightStore::from_tensors(map, hash)
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(seed: u64, counter: u64) -> u64 {
    let mut z = seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stand-in weights with realistic magnitudes (Kaiming-scale
/// convolutions, BN statistics near identity). `tools/make_fixtures.py`
/// generates exactly the same values for the torchvision parity fixtures.
pub fn synthetic_weights(seed: u64) -> WeightStore {
    let mut map = BTreeMap::new();
    let mut counter = 0u64;
    let unit_scale = 2f32.powi(-24);
    for entry in parameter_table() {
        let n: usize = entry.shape.iter().product();
        let scale = match entry.kind {
            ParamKind::ConvWeight => {
                let fan_in: usize = entry.shape[1..].iter().product();
                (3.0f64 / fan_in as f64).sqrt() as f32
            }
            ParamKind::FcWeight => (1.0f64 / 512.0).sqrt() as f32,
            ParamKind::FcBias => 0.01,
            _ => 0.1,
        };
        let data = (0..n as u64)
            .map(|i| {
                let u = (splitmix64(seed, counter + i) >> 40) as f32 * unit_scale;
                let signed = u * 2.0 - 1.0;
                match entry.kind {
                    ParamKind::BnWeight | ParamKind::BnRunningVar => 0.5 + u,
                    _ => signed * scale,
                }
            })
            .collect();
        counter += n as u64;
        map.insert(entry.name.clone(), Tensor::from_parts(entry.shape.clone(), data));
    }
    let hash = content_hash(&map);
    WeightStore::from_tensors(map, hash).expect("table-consistent by construction")
}

/// Seed used by the committed parity fixtures.
pub const FIXTURE_SEED: u64 = 0x5EED_0001;
