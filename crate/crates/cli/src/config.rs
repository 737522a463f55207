// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration and the reproducibility header of every artifact.

use std::path::{Path, PathBuf};

use resstream::digest::sha256_hex;
use resstream::featviz::FzConfig;
use resstream::resnet::{load_weights, synthetic_weights, BlockRef, OutputMode, WeightStore, FIXTURE_SEED};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Version of the CSV and JSON layouts written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// Where weights come from: an export directory/manifest, or the built-in
/// deterministic stand-in (`synthetic` or `synthetic:<seed>`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsSource {
    Export(PathBuf),
    Synthetic(u64),
}

impl std::str::FromStr for WeightsSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let Some(rest) = s.strip_prefix("synthetic") else {
            return Ok(Self::Export(PathBuf::from(s)));
        };
        match rest {
            "" => Ok(Self::Synthetic(FIXTURE_SEED)),
            r => {
                let digits = r.strip_prefix(':').ok_or_else(|| format!("bad weights source `{s}`"))?;
                let seed = match digits.strip_prefix("0x") {
                    Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16),
                    None => digits.parse(),
                }
                .map_err(|e| format!("bad synthetic seed `{digits}`: {e}"))?;
                Ok(Self::Synthetic(seed))
            }
        }
    }
}

impl WeightsSource {
    pub fn load(&self) -> CliResult<WeightStore> {
        match self {
            Self::Export(p) => Ok(load_weights(p)?),
            Self::Synthetic(seed) => Ok(synthetic_weights(*seed)),
        }
    }
}

/// Every input that determines a verb's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub verb: String,
    pub weights: WeightsSource,
    pub output_dir: PathBuf,
    pub blocks: Vec<BlockRef>,
    pub fz: FzConfig,
    /// Per-tap jitter schedule applied on top of `fz`.
    pub tap_jitter: bool,
    pub corpus: Option<PathBuf>,
    pub seed: u64,
    pub output_mode: OutputMode,
}

impl RunConfig {
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("run config serialises"))
    }
}

/// Provenance block embedded in JSON and SVG artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub schema_version: u32,
    pub run_config_hash: String,
    pub weights_hash: String,
    /// Manifest hash of the corpus, when one was used.
    pub corpus_hash: Option<String>,
    pub reduced_config: bool,
    pub run_config: RunConfig,
}

impl ArtifactHeader {
    pub fn new(run: &RunConfig, weights_hash: &str, corpus_hash: Option<&str>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            run_config_hash: run.hash(),
            weights_hash: weights_hash.to_string(),
            corpus_hash: corpus_hash.map(str::to_string),
            reduced_config: run.fz.is_reduced(),
            run_config: run.clone(),
        }
    }

    /// One-line form for SVG comments and PNG text chunks.
    pub fn summary(&self) -> String {
        format!(
            "schema={} run_config={} weights={} corpus={}{}",
            self.schema_version,
            self.run_config_hash,
            self.weights_hash,
            self.corpus_hash.as_deref().unwrap_or("none"),
            if self.reduced_config { " reduced_fz_config" } else { "" }
        )
    }
}

/// A JSON artifact: header plus data section.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub header: ArtifactHeader,
    pub data: T,
}

pub fn write_json<T: Serialize>(path: &Path, header: &ArtifactHeader, data: &T) -> CliResult<()> {
    let doc = Artifact {
        header: header.clone(),
        data,
    };
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Artifact<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sources_parse() {
        assert_eq!("synthetic".parse(), Ok(WeightsSource::Synthetic(FIXTURE_SEED)));
        assert_eq!("synthetic:7".parse(), Ok(WeightsSource::Synthetic(7)));
        assert_eq!("synthetic:0x5EED_0001".parse(), Ok(WeightsSource::Synthetic(FIXTURE_SEED)));
        assert_eq!("w/manifest.json".parse(), Ok(WeightsSource::Export("w/manifest.json".into())));
        assert!("synthetic7".parse::<WeightsSource>().is_err());
    }
}
