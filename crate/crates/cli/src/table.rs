// SPDX-License-Identifier: MIT OR Apache-2.0

//! One CSV row per channel of a block sweep.

use std::path::Path;

use resstream::sweep::BlockSweepReport;
use serde::{Deserialize, Serialize};

use crate::config::{ArtifactHeader, SCHEMA_VERSION};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRow {
    pub schema_version: u32,
    pub block: String,
    pub channel: usize,
    #[serde(rename = "M")]
    pub m: Option<f64>,
    pub clamp_reason: Option<String>,
    pub passes_mix: Option<bool>,
    pub passes_up: Option<bool>,
    pub passes_down: Option<bool>,
    pub delta_up: Option<f64>,
    pub delta_down: Option<f64>,
    #[serde(rename = "SM")]
    pub sm: Option<f64>,
    pub excluded_flag: bool,
    pub exclusion_reason: Option<String>,
    pub run_config_hash: String,
    pub weights_hash: String,
    pub corpus_hash: String,
}

/// Rows in channel order; flagged channels keep their row with the
/// measurement columns empty.
pub fn channel_rows(report: &BlockSweepReport, header: &ArtifactHeader) -> Vec<ChannelRow> {
    let base = |channel| ChannelRow {
        schema_version: SCHEMA_VERSION,
        block: report.block.to_string(),
        channel,
        m: None,
        clamp_reason: None,
        passes_mix: None,
        passes_up: None,
        passes_down: None,
        delta_up: None,
        delta_down: None,
        sm: None,
        excluded_flag: false,
        exclusion_reason: None,
        run_config_hash: header.run_config_hash.clone(),
        weights_hash: header.weights_hash.clone(),
        corpus_hash: header.corpus_hash.clone().unwrap_or_default(),
    };
    let mut rows: Vec<ChannelRow> = report
        .records
        .iter()
        .map(|r| ChannelRow {
            m: Some(r.mix.m),
            clamp_reason: Some(r.mix.clamp_reason.as_str().to_string()),
            passes_mix: Some(r.scale.passes_mix),
            passes_up: Some(r.scale.passes_up),
            passes_down: Some(r.scale.passes_down),
            delta_up: Some(r.scale.delta_up),
            delta_down: Some(r.scale.delta_down),
            sm: r.scale.sm,
            ..base(r.channel())
        })
        .chain(report.flagged.iter().map(|f| ChannelRow {
            excluded_flag: true,
            exclusion_reason: Some(f.reason.clone()),
            ..base(f.channel)
        }))
        .collect();
    rows.sort_by_key(|r| r.channel);
    rows
}

pub fn write_rows(path: &Path, rows: &[ChannelRow]) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_rows(path: &Path) -> CliResult<Vec<ChannelRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
