// SPDX-License-Identifier: MIT OR Apache-2.0

//! Image corpora and top-9 mining.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use crate::digest::{fields_hash, sha256_hex};
use crate::error::{Error, Result};
use crate::resnet::preprocess::load_image;
use crate::resnet::{OutputMode, ResNet18, Tap};
use crate::Tensor;

/// Tracked images per channel.
pub const TOP_K: usize = 9;
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    /// Path relative to the corpus root, `/`-separated.
    pub name: String,
    pub sha256: String,
}

/// Sorted image list of a directory with content hashes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub root: PathBuf,
    pub entries: Vec<CorpusEntry>,
    pub manifest_hash: String,
}

fn collect(dir: &Path, root: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect(&path, root, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        {
            let rel = path.strip_prefix(root).expect("walked from root");
            let name = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            out.push(name);
        }
    }
    Ok(())
}

impl Corpus {
    /// Every png/jpeg file below `dir`, sorted by relative path.
    pub fn scan(dir: &Path) -> Result<Self> {
        let mut names = Vec::new();
        collect(dir, dir, &mut names)?;
        names.sort();
        if names.is_empty() {
            return Err(Error::EmptyCorpus(dir.to_path_buf()));
        }
        let entries = names
            .into_iter()
            .map(|name| {
                let p = dir.join(&name);
                let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                Ok(CorpusEntry {
                    sha256: sha256_hex(&bytes),
                    name,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest_hash = fields_hash(
            entries
                .iter()
                .flat_map(|e| [e.name.as_bytes(), e.sha256.as_bytes()]),
        );
        Ok(Self {
            root: dir.to_path_buf(),
            entries,
            manifest_hash,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self, id: usize) -> PathBuf {
        self.root.join(&self.entries[id].name)
    }

    /// Decode and preprocess image `id`.
    pub fn load(&self, id: usize) -> Result<Tensor<f32>> {
        load_image(&self.path(id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopEntry {
    pub image_id: usize,
    pub activation: f32,
}

fn ranks_before(a: &TopEntry, b: &TopEntry) -> std::cmp::Ordering {
    b.activation
        .total_cmp(&a.activation)
        .then(a.image_id.cmp(&b.image_id))
}

/// The nine highest activations of one channel, descending, ties by
/// ascending image id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Top9Tracker {
    entries: Vec<TopEntry>,
}

impl Top9Tracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[TopEntry] {
        &self.entries
    }

    pub fn image_ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.image_id).collect()
    }

    /// Offer one observation; NaN activations are ignored.
    pub fn insert(&mut self, image_id: usize, activation: f32) {
        if activation.is_nan() || self.entries.iter().any(|e| e.image_id == image_id) {
            return;
        }
        let e = TopEntry { image_id, activation };
        if self.entries.len() == TOP_K && ranks_before(&e, self.entries.last().unwrap()).is_gt() {
            return;
        }
        let at = self
            .entries
            .partition_point(|x| ranks_before(x, &e).is_lt());
        self.entries.insert(at, e);
        self.entries.truncate(TOP_K);
    }

    /// Top nine of the union.
    pub fn merge(&self, other: &Self) -> Self {
        let mut all: Vec<TopEntry> = self.entries.iter().chain(&other.entries).copied().collect();
        all.sort_by(ranks_before);
        all.dedup_by_key(|e| e.image_id);
        all.truncate(TOP_K);
        Self { entries: all }
    }
}

/// Trackers for every channel of every mined tap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Top9Set {
    pub weights_hash: String,
    pub corpus_hash: String,
    pub corpus_size: usize,
    pub trackers: BTreeMap<Tap, Vec<Top9Tracker>>,
    /// Files that failed to decode.
    pub skipped: Vec<String>,
}

impl Top9Set {
    fn empty(net: &ResNet18<f32>, corpus: &Corpus, taps: &[Tap]) -> Self {
        Self {
            weights_hash: net.weights_hash().to_string(),
            corpus_hash: corpus.manifest_hash.clone(),
            corpus_size: corpus.len(),
            trackers: taps.iter().map(|&t| (t, vec![Top9Tracker::new(); t.channels()])).collect(),
            skipped: Vec::new(),
        }
    }

    pub fn get(&self, tap: Tap, channel: usize) -> Option<&Top9Tracker> {
        self.trackers.get(&tap).and_then(|v| v.get(channel))
    }

    /// Merge another shard of the same corpus and taps.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.trackers.keys().ne(other.trackers.keys()) || self.corpus_hash != other.corpus_hash {
            return Err(Error::invalid("top9 merge", "shards of different runs".to_string()));
        }
        let mut out = self.clone();
        for (tap, list) in &mut out.trackers {
            for (a, b) in list.iter_mut().zip(&other.trackers[tap]) {
                *a = a.merge(b);
            }
        }
        out.skipped.extend(other.skipped.iter().cloned());
        out.skipped.sort();
        out.skipped.dedup();
        Ok(out)
    }
}

/// Center activations of every channel at `taps` for one image.
fn center_rows(net: &ResNet18<f32>, image: &Tensor<f32>, taps: &[Tap]) -> Result<Vec<Vec<f32>>> {
    let acts = net.activations(image, taps)?;
    taps.iter()
        .map(|&t| {
            (0..t.channels())
                .map(|c| acts.center_with(t, c, OutputMode::PreRelu))
                .collect()
        })
        .collect()
}

/// Per-image results of a corpus pass; undecodable files yield errors.
fn corpus_pass(
    net: &ResNet18<f32>,
    corpus: &Corpus,
    taps: &[Tap],
    ids: std::ops::Range<usize>,
) -> Vec<(usize, Result<Vec<Vec<f32>>>)> {
    ids.into_par_iter()
        .map(|id| (id, corpus.load(id).and_then(|img| center_rows(net, &img, taps))))
        .collect()
}

/// Options for long corpus passes.
#[derive(Debug, Clone, Default)]
pub struct PassOptions {
    /// Progress file; resumes from it when present and matching.
    pub checkpoint: Option<PathBuf>,
    /// Images between checkpoint writes (default 64).
    pub every: usize,
}

/// One pass over `corpus`, keeping the nine most activating images of every
/// channel at `taps`.
pub fn top9_mine(net: &ResNet18<f32>, taps: &[Tap], corpus: &Corpus, opts: &PassOptions) -> Result<Top9Set> {
    for t in taps {
        t.block.ensure_studied()?;
    }
    let tap_names: Vec<String> = taps.iter().map(ToString::to_string).collect();
    let run_key = fields_hash(
        [net.weights_hash().as_bytes(), corpus.manifest_hash.as_bytes()]
            .into_iter()
            .chain(tap_names.iter().map(|s| s.as_bytes())),
    );
    let mut set = Top9Set::empty(net, corpus, taps);
    let mut start = 0;
    if let Some(path) = &opts.checkpoint {
        if let Some((next, saved)) = load_checkpoint::<Top9Set>(path, &run_key, "top9")? {
            log::info!("resuming top-9 mining at image {next}/{}", corpus.len());
            start = next;
            set = saved;
        }
    }
    let every = if opts.every == 0 { 64 } else { opts.every };
    while start < corpus.len() {
        let end = (start + every).min(corpus.len());
        for (id, rows) in corpus_pass(net, corpus, taps, start..end) {
            match rows {
                Ok(rows) => {
                    for (tap, row) in taps.iter().zip(rows) {
                        let list = set.trackers.get_mut(tap).expect("initialised");
                        for (c, v) in row.into_iter().enumerate() {
                            list[c].insert(id, v);
                        }
                    }
                }
                Err(e) => {
                    log::warn!("skipping {}: {e}", corpus.entries[id].name);
                    set.skipped.push(corpus.entries[id].name.clone());
                }
            }
        }
        start = end;
        log::info!("top-9 mining: {start}/{} images", corpus.len());
        if let Some(path) = &opts.checkpoint {
            save_checkpoint(path, &run_key, "top9", start, &set)?;
        }
    }
    Ok(set)
}

/// Center activations of `taps` over the whole corpus, one row per
/// decodable image: `rows[image][tap][channel]`.
pub fn corpus_activations(
    net: &ResNet18<f32>,
    taps: &[Tap],
    corpus: &Corpus,
) -> Result<(Vec<usize>, Vec<Vec<Vec<f32>>>)> {
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (id, r) in corpus_pass(net, corpus, taps, 0..corpus.len()) {
        match r {
            Ok(row) => {
                ids.push(id);
                rows.push(row);
            }
            Err(e) => log::warn!("skipping {}: {e}", corpus.entries[id].name),
        }
    }
    Ok((ids, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tracker(obs: &[(usize, f32)]) -> Top9Tracker {
        let mut t = Top9Tracker::new();
        for &(i, v) in obs {
            t.insert(i, v);
        }
        t
    }

    #[test]
    fn keeps_nine_descending_with_id_ties() {
        let obs: Vec<(usize, f32)> = (0..20).map(|i| (i, (i % 7) as f32)).collect();
        let t = tracker(&obs);
        assert_eq!(t.entries().len(), 9);
        let acts: Vec<f32> = t.entries().iter().map(|e| e.activation).collect();
        assert_eq!(acts, vec![6.0, 6.0, 5.0, 5.0, 5.0, 4.0, 4.0, 4.0, 3.0]);
        assert_eq!(t.image_ids(), vec![6, 13, 5, 12, 19, 4, 11, 18, 3]);
    }

    #[test]
    fn merge_equals_single_pass() {
        let obs: Vec<(usize, f32)> = (0..40).map(|i| (i, ((i * 17) % 11) as f32)).collect();
        let whole = tracker(&obs);
        let merged = tracker(&obs[..15]).merge(&tracker(&obs[15..]));
        assert_eq!(whole, merged);
    }
}
