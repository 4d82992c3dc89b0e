//! Resumable run state. Each commit writes new checkpoint files first and
//! then atomically replaces `state.json`; files the new state no longer
//! references are removed afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::objective::MetaModel;
use super::protocol::{AsmgState, Setup};
use super::PeriodLog;
use crate::error::{Error, Result};
use crate::meta::{load_meta, save_meta, LinearMetaParams, MetaCheckpoint};
use crate::model::{load_checkpoint, save_checkpoint, BaseModelParams, ModelLayout};

const STATE: &str = "state.json";

#[derive(Serialize, Deserialize)]
struct AsmgFile {
    tag: String,
    t: i64,
    meta_updates: usize,
    logs: Vec<PeriodLog>,
    checksums: Vec<(i64, u64)>,
    models: Vec<(i64, String)>,
    meta_file: Option<String>,
    alpha: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct BuFile {
    tag: String,
    t: i64,
    logs: Vec<PeriodLog>,
    checksums: Vec<(i64, u64)>,
    model_file: String,
}

/// Progress of a batch-update run.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct SavedRun {
    pub t: i64,
    pub params: BaseModelParams,
    pub logs: Vec<PeriodLog>,
    pub checksums: Vec<(i64, u64)>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

fn base_name(t: i64) -> String {
    format!("base_{t}.ckpt")
}

fn prune(dir: &Path, keep: &BTreeSet<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        let ours =
            (name.starts_with("base_") || name.starts_with("meta_")) && name.ends_with(".ckpt");
        if ours && !keep.contains(&name) {
            fs::remove_file(dir.join(&name))?;
        }
    }
    Ok(())
}

fn read_state<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<Option<T>> {
    let path = dir.join(STATE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

fn check_tag(found: &str, want: &str, dir: &Path) -> Result<()> {
    if found != want {
        return Err(Error::Config(format!(
            "{} holds state of a different configuration; use a fresh output directory",
            dir.display()
        )));
    }
    Ok(())
}

pub(crate) fn save_asmg(dir: &Path, tag: &str, setup: &Setup<'_>, state: &AsmgState) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut keep = BTreeSet::new();
    let mut models = Vec::new();
    for (&t, params) in &state.models {
        let name = base_name(t);
        if !dir.join(&name).exists() {
            save_checkpoint(&dir.join(&name), setup.layout, params)?;
        }
        keep.insert(name.clone());
        models.push((t, name));
    }
    let (meta_file, alpha) = match &state.meta {
        MetaModel::Gru(meta) => {
            let name = format!("meta_{}.ckpt", state.t);
            let ckpt = MetaCheckpoint {
                period: state.t,
                meta: meta.clone(),
                store: state.store.clone(),
            };
            save_meta(&dir.join(&name), setup.map, &ckpt)?;
            keep.insert(name.clone());
            (Some(name), None)
        }
        MetaModel::Linear(l) => (None, Some(l.alpha.clone())),
    };
    let file = AsmgFile {
        tag: tag.to_string(),
        t: state.t,
        meta_updates: state.meta_updates,
        logs: state.logs.clone(),
        checksums: state.checksums.clone(),
        models,
        meta_file,
        alpha,
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    write_atomic(&dir.join(STATE), json.as_bytes())?;
    prune(dir, &keep)
}

pub(crate) fn load_asmg(dir: &Path, tag: &str, setup: &Setup<'_>) -> Result<Option<AsmgState>> {
    let Some(file) = read_state::<AsmgFile>(dir)? else {
        return Ok(None);
    };
    check_tag(&file.tag, tag, dir)?;
    let mut models = BTreeMap::new();
    for (t, name) in &file.models {
        models.insert(*t, load_checkpoint(&dir.join(name), setup.layout)?);
    }
    let (meta, store) = match (&file.meta_file, file.alpha) {
        (Some(name), _) => {
            let ckpt = load_meta(&dir.join(name), setup.map)?;
            (MetaModel::Gru(ckpt.meta), ckpt.store)
        }
        (None, Some(alpha)) => (MetaModel::Linear(LinearMetaParams { alpha }), None),
        (None, None) => return Err(Error::Checkpoint("state names no meta parameters".into())),
    };
    Ok(Some(AsmgState {
        t: file.t,
        models,
        meta,
        store,
        meta_updates: file.meta_updates,
        logs: file.logs,
        checksums: file.checksums,
    }))
}

pub(crate) fn save_bu(dir: &Path, tag: &str, layout: &ModelLayout, run: &SavedRun) -> Result<()> {
    fs::create_dir_all(dir)?;
    let name = base_name(run.t);
    save_checkpoint(&dir.join(&name), layout, &run.params)?;
    let file = BuFile {
        tag: tag.to_string(),
        t: run.t,
        logs: run.logs.clone(),
        checksums: run.checksums.clone(),
        model_file: name.clone(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    write_atomic(&dir.join(STATE), json.as_bytes())?;
    prune(dir, &BTreeSet::from([name]))
}

pub(crate) fn load_bu(dir: &Path, tag: &str, layout: &ModelLayout) -> Result<Option<SavedRun>> {
    let Some(file) = read_state::<BuFile>(dir)? else {
        return Ok(None);
    };
    check_tag(&file.tag, tag, dir)?;
    let params = load_checkpoint(&dir.join(&file.model_file), layout)?;
    Ok(Some(SavedRun {
        t: file.t,
        params,
        logs: file.logs,
        checksums: file.checksums,
    }))
}

const LOG_HEADER: &str = "period,variant,auc,logloss,meta_seconds,base_seconds";

/// `periodlog.csv`: one row per served period.
pub fn write_period_log(path: &Path, logs: &[PeriodLog]) -> Result<()> {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for l in logs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            l.period, l.variant, l.auc, l.logloss, l.meta_seconds, l.base_seconds
        ));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_period_log(path: &Path) -> Result<Vec<PeriodLog>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == LOG_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header {LOG_HEADER:?}"),
            })
        }
    }
    let mut logs = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            line: i as u64 + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(&format!("bad number {s:?}")))
        };
        logs.push(PeriodLog {
            period: f[0].parse().map_err(|_| bad("bad period"))?,
            variant: f[1].to_string(),
            auc: num(f[2])?,
            logloss: num(f[3])?,
            meta_seconds: num(f[4])?,
            base_seconds: num(f[5])?,
        });
    }
    Ok(logs)
}
