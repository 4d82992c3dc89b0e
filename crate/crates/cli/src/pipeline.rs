//! The experiment lifecycle on disk: prepare, pretrain, run, report.
//!
//! ```text
//! <out>/config.conf
//! <out>/data/manifest.json, period shards
//! <out>/pretrain/seed-<s>.ckpt
//! <out>/runs/<variant>/seed-<s>/{config.conf, periodlog.csv, state/}
//! <out>/results.csv, <out>/results.md
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use asmg_core::data::{
    encode_stream, read_interactions, read_manifest, read_shard, write_shards, Interaction,
    Manifest, PeriodDataset,
};
use asmg_core::meta::GroupMap;
use asmg_core::metrics::{aggregate, results_csv, results_markdown, PeriodMetric, ResultRow};
use asmg_core::model::{
    init_params_with, load_checkpoint, pretrain as pretrain_params, save_checkpoint,
    BaseModelParams, ModelLayout,
};
use asmg_core::trainer::{
    read_period_log, run_asmg, run_baseline_bu, write_period_log, BaseChain, PeriodLog,
    RunOptions, Setup, Stream, Variant,
};
use asmg_core::Error;
use sha2::{Digest, Sha256};

use crate::config::{DatasetSource, ExperimentConfig};
use crate::synth;

pub const CONFIG_FILE: &str = "config.conf";
pub const PERIOD_LOG: &str = "periodlog.csv";
pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_MD: &str = "results.md";

pub fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

pub fn checkpoint_path(out: &Path, seed: u64) -> PathBuf {
    out.join("pretrain").join(format!("seed-{seed}.ckpt"))
}

pub fn run_dir(out: &Path, variant: Variant, seed: u64) -> PathBuf {
    out.join("runs")
        .join(variant.slug())
        .join(format!("seed-{seed}"))
}

/// IU and BU-1 are the same run, so only one of them is kept.
pub fn dedup_variants(variants: &[Variant]) -> Vec<Variant> {
    let mut out: Vec<Variant> = Vec::new();
    for &v in variants {
        let v = if v == Variant::Bu(1) { Variant::Iu } else { v };
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

pub fn load_interactions(cfg: &ExperimentConfig) -> Result<Vec<Interaction>> {
    match &cfg.dataset {
        DatasetSource::Synthetic => synth::generate(&cfg.synthetic),
        DatasetSource::File(path) => Ok(read_interactions(path, cfg.delimiter)
            .with_context(|| format!("reading {}", path.display()))?),
    }
}

/// Encodes the configured dataset into period shards under `<out>/data`.
/// Re-running with the same configuration rewrites identical files.
pub fn prepare(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    let rows = load_interactions(cfg)?;
    let stream = encode_stream(&rows, cfg.split, cfg.negatives, cfg.seed)?;
    cfg.check_period_count(stream.periods.len())?;
    let manifest = write_shards(&data_dir(out), &stream, cfg.seed)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
    Ok(manifest)
}

pub struct Prepared {
    pub manifest: Manifest,
    pub periods: Vec<PeriodDataset>,
    pub layout: ModelLayout,
}

impl Prepared {
    pub fn load(cfg: &ExperimentConfig, out: &Path) -> Result<Self> {
        let dir = data_dir(out);
        let manifest = read_manifest(&dir).with_context(|| {
            format!(
                "no prepared data in {}; run prepare first",
                dir.display()
            )
        })?;
        let periods = manifest
            .periods
            .iter()
            .map(|e| read_shard(&dir, e))
            .collect::<asmg_core::Result<Vec<_>>>()?;
        cfg.check_period_count(periods.len())?;
        let layout = cfg.layout(&manifest.schema)?;
        Ok(Prepared {
            manifest,
            periods,
            layout,
        })
    }

    pub fn stream(&self, cfg: &ExperimentConfig) -> Result<Stream<'_>> {
        Ok(Stream::new(&self.periods, cfg.pretrain_periods)?)
    }

    pub fn dataset_name(cfg: &ExperimentConfig) -> String {
        match &cfg.dataset {
            DatasetSource::Synthetic => "synthetic".into(),
            DatasetSource::File(p) => p
                .file_stem()
                .map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned()),
        }
    }
}

/// Trains the initial model on the pre-training periods and writes its
/// checkpoint.
pub fn pretrain(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    out: &Path,
    seed: u64,
) -> Result<BaseModelParams> {
    let stream = prepared.stream(cfg)?;
    let init = init_params_with(&prepared.layout, seed, cfg.mlp_init);
    let theta0 = pretrain_params(
        &prepared.layout,
        &init,
        &stream.pretrain_samples(),
        &cfg.pretrain_train(),
        seed,
    )?;
    let path = checkpoint_path(out, seed);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    save_checkpoint(&path, &prepared.layout, &theta0)?;
    Ok(theta0)
}

fn load_theta0(prepared: &Prepared, out: &Path, seed: u64) -> Result<BaseModelParams> {
    let path = checkpoint_path(out, seed);
    if !path.exists() {
        return Err(anyhow!(Error::Data(format!(
            "no pre-trained model at {}; run pretrain first",
            path.display()
        ))));
    }
    Ok(load_checkpoint(&path, &prepared.layout)?)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Identifies everything that shapes one (variant, seed) run. The variant
/// list and run count only decide which runs exist.
fn run_tag(cfg: &ExperimentConfig, variant: Variant, seed: u64) -> String {
    let mut h = Sha256::new();
    for line in cfg.to_text().lines() {
        if line.starts_with("variants ") || line.starts_with("runs ") {
            continue;
        }
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    h.update(format!("{}|{seed}", variant.slug()).as_bytes());
    hex(&h.finalize())
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub variant: Variant,
    pub seed: u64,
    pub logs: Vec<PeriodLog>,
    pub checksums: Vec<(i64, u64)>,
    pub completed: bool,
}

/// Runs every variant for every seed, resuming whatever a previous
/// invocation left behind. `stop_after` ends each run after that period.
pub fn run(
    cfg: &ExperimentConfig,
    out: &Path,
    variants: &[Variant],
    seeds: &[u64],
    stop_after: Option<i64>,
) -> Result<Vec<RunRecord>> {
    let prepared = Prepared::load(cfg, out)?;
    let stream = prepared.stream(cfg)?;
    let map = GroupMap::build(&prepared.layout);
    let base = cfg.base_train();
    let variants = dedup_variants(variants);
    let mut records = Vec::new();
    for &seed in seeds {
        let theta0 = load_theta0(&prepared, out, seed)?;
        let chain = BaseChain::compute(
            &prepared.layout,
            &theta0,
            stream,
            stream.last_update(),
            &base,
            seed,
        )?;
        for &variant in &variants {
            let trainer = cfg.trainer(variant);
            let setup = Setup {
                layout: &prepared.layout,
                map: &map,
                stream,
                trainer: &trainer,
                base: &base,
                seed,
                chain: Some(&chain),
            };
            let dir = run_dir(out, variant, seed);
            fs::create_dir_all(&dir)?;
            fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
            let opts = RunOptions {
                dir: Some(dir.join("state")),
                stop_after,
                tag: run_tag(cfg, variant, seed),
            };
            let outcome = match variant {
                Variant::Iu => run_baseline_bu(&setup, 1, &theta0, &opts),
                Variant::Bu(w) => run_baseline_bu(&setup, w, &theta0, &opts),
                _ => run_asmg(&setup, &theta0, &opts),
            }
            .with_context(|| format!("{variant} with seed {seed}"))?;
            write_period_log(&dir.join(PERIOD_LOG), &outcome.logs)?;
            records.push(RunRecord {
                variant,
                seed,
                logs: outcome.logs,
                checksums: outcome.checksums,
                completed: outcome.completed,
            });
        }
    }
    Ok(records)
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub rows: Vec<ResultRow>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn mean_auc(rows: &[ResultRow], v: Variant) -> Option<f64> {
    let name = v.to_string();
    rows.iter().find(|r| r.method == name).map(|r| r.auc.mean)
}

/// Ordering checks on mean test AUC; a check is skipped unless every
/// variant it names was run.
pub fn trend_checks(rows: &[ResultRow]) -> Vec<Check> {
    let mut checks = Vec::new();
    let ladder = [Variant::Iu, Variant::Bu(3), Variant::Bu(5), Variant::Bu(7)];
    let present: Vec<(Variant, f64)> = ladder
        .iter()
        .filter_map(|&v| mean_auc(rows, v).map(|a| (v, a)))
        .collect();
    if present.len() == ladder.len() {
        let passed = present.windows(2).all(|w| w[0].1 > w[1].1);
        let detail = present
            .iter()
            .map(|(v, a)| format!("{v} {a:.4}"))
            .collect::<Vec<_>>()
            .join(" > ");
        checks.push(Check {
            name: "IU > BU-3 > BU-5 > BU-7".into(),
            passed,
            detail,
        });
    }
    if let (Some(multi), Some(single), Some(iu)) = (
        mean_auc(rows, Variant::GruMulti),
        mean_auc(rows, Variant::GruSingle),
        mean_auc(rows, Variant::Iu),
    ) {
        checks.push(Check {
            name: "ASMG-GRUmulti >= ASMG-GRUsingle >= IU".into(),
            passed: multi >= single && single >= iu,
            detail: format!("{multi:.4} >= {single:.4} >= {iu:.4}"),
        });
        checks.push(Check {
            name: "ASMG-GRUmulti - IU >= 0.005".into(),
            passed: multi - iu >= 0.005,
            detail: format!("{:+.4}", multi - iu),
        });
    }
    checks
}

/// Summarizes the test periods of every finished run into `results.csv`
/// and `results.md`.
pub fn report(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    let periods: Vec<i64> = cfg.test_range().collect();
    let dataset = Prepared::dataset_name(cfg);
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for variant in dedup_variants(&cfg.variants) {
        let mut runs = Vec::new();
        for seed in cfg.seeds() {
            let path = run_dir(out, variant, seed).join(PERIOD_LOG);
            if !path.exists() {
                return Err(anyhow!(Error::Data(format!(
                    "missing {}; run {variant} for seed {seed} first",
                    path.display()
                ))));
            }
            let logs = read_period_log(&path)?;
            runs.push(
                logs.iter()
                    .map(|l| PeriodMetric {
                        period: l.period,
                        auc: l.auc,
                        logloss: l.logloss,
                    })
                    .collect::<Vec<_>>(),
            );
        }
        let agg = aggregate(&runs, &periods)
            .with_context(|| format!("{variant}: incomplete run logs"))?;
        rows.push(ResultRow {
            method: variant.to_string(),
            dataset: dataset.clone(),
            auc: agg.auc,
            logloss: agg.logloss,
        });
    }
    if !rows.iter().any(|r| r.method == Variant::Iu.to_string()) {
        warnings.push("no IU baseline in the variant list; improvement columns omitted".into());
    }
    fs::write(out.join(RESULTS_CSV), results_csv(&rows))?;
    fs::write(out.join(RESULTS_MD), results_markdown(&rows))?;
    let checks = if cfg.dataset == DatasetSource::Synthetic {
        trend_checks(&rows)
    } else {
        Vec::new()
    };
    Ok(Report {
        rows,
        checks,
        warnings,
    })
}
