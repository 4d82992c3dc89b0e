//! Period shards: `period_<t>.tsv` plus `manifest.json`.
//!
//! Each shard line is
//! `label \t timestamp \t user \t item \t history \t user_side \t item_side`
//! where the last three columns are comma-separated index lists.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encode::{EncodedStream, FeatureSchema, PeriodDataset, Sample};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const SHARD_HEADER: &str = "label\ttimestamp\tuser\titem\thistory\tuser_side\titem_side";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodEntry {
    pub index: usize,
    pub file: String,
    pub start: i64,
    pub end: i64,
    pub interactions: usize,
    pub samples: usize,
    pub positives: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub scheme: String,
    pub negatives: String,
    pub seed: u64,
    pub schema: FeatureSchema,
    pub periods: Vec<PeriodEntry>,
}

fn join(list: &[u32]) -> String {
    let mut s = String::new();
    for (i, v) in list.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v}").expect("write to string");
    }
    s
}

fn split_list(field: &str, line: u64) -> Result<Vec<u32>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(',')
        .map(|v| {
            v.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad index {v:?}"),
            })
        })
        .collect()
}

/// Writes one shard per period and the manifest; existing files are
/// overwritten, so re-running with the same inputs is byte-identical.
pub fn write_shards(dir: &Path, stream: &EncodedStream, seed: u64) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(stream.periods.len());
    for (p, &count) in stream.periods.iter().zip(&stream.interaction_counts) {
        let file = format!("period_{}.tsv", p.index);
        let mut text = String::with_capacity(p.samples.len() * 48);
        text.push_str(SHARD_HEADER);
        text.push('\n');
        for s in &p.samples {
            writeln!(
                text,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.label,
                s.timestamp,
                s.user,
                s.item,
                join(&s.history),
                join(&s.user_side),
                join(&s.item_side)
            )
            .expect("write to string");
        }
        fs::write(dir.join(&file), text)?;
        entries.push(PeriodEntry {
            index: p.index,
            file,
            start: p.start,
            end: p.end,
            interactions: count,
            samples: p.samples.len(),
            positives: p.positives(),
        });
    }
    let manifest = Manifest {
        format_version: 1,
        scheme: stream.scheme.to_string(),
        negatives: stream.negatives.to_string(),
        seed,
        schema: stream.schema.clone(),
        periods: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn read_shard(dir: &Path, entry: &PeriodEntry) -> Result<PeriodDataset> {
    let path = dir.join(&entry.file);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(SHARD_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("{}: missing shard header", path.display()),
        });
    }
    let mut samples = Vec::with_capacity(entry.samples);
    for (i, line) in lines.enumerate() {
        let ln = i as u64 + 2;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(Error::Parse {
                line: ln,
                msg: format!(
                    "{}: expected 7 columns, found {}",
                    path.display(),
                    cols.len()
                ),
            });
        }
        let num = |s: &str| -> Result<i64> {
            s.parse().map_err(|_| Error::Parse {
                line: ln,
                msg: format!("{}: bad number {s:?}", path.display()),
            })
        };
        samples.push(Sample {
            label: num(cols[0])? as u8,
            timestamp: num(cols[1])?,
            user: num(cols[2])? as u32,
            item: num(cols[3])? as u32,
            history: split_list(cols[4], ln)?,
            user_side: split_list(cols[5], ln)?,
            item_side: split_list(cols[6], ln)?,
        });
    }
    if samples.len() != entry.samples {
        return Err(Error::Data(format!(
            "{}: manifest lists {} samples, shard has {}",
            path.display(),
            entry.samples,
            samples.len()
        )));
    }
    Ok(PeriodDataset {
        index: entry.index,
        start: entry.start,
        end: entry.end,
        samples,
    })
}
