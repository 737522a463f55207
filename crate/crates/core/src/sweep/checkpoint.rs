// SPDX-License-Identifier: MIT OR Apache-2.0

//! Resumable progress files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT: &str = "resstream-checkpoint/1";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile<P> {
    format: String,
    /// Hash of everything the stage's output depends on.
    run_key: String,
    stage: String,
    /// First unprocessed channel or image index.
    next_index: usize,
    payload: P,
}

/// Saved progress for `stage`, if the file exists and belongs to `run_key`.
pub fn load_checkpoint<P: DeserializeOwned>(
    path: &Path,
    run_key: &str,
    stage: &str,
) -> Result<Option<(usize, P)>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile<P> = serde_json::from_str(&text)?;
    if file.format != FORMAT || file.run_key != run_key || file.stage != stage {
        log::warn!("ignoring checkpoint {} from a different run", path.display());
        return Ok(None);
    }
    Ok(Some((file.next_index, file.payload)))
}

pub fn save_checkpoint<P: Serialize>(
    path: &Path,
    run_key: &str,
    stage: &str,
    next_index: usize,
    payload: &P,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        run_key: run_key.to_string(),
        stage: stage.to_string(),
        next_index,
        payload,
    };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec(&file)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
