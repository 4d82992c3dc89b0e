//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown and repeated keys are errors.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, ensure, Context, Result};
use asmg_core::data::{NegativeMode, SplitScheme};
use asmg_core::Error;
use asmg_core::model::{MlpInit, ModelLayout, Pooling, TrainConfig};
use asmg_core::trainer::{
    AdvanceRule, EarlyWindow, LambdaMode, MetaTrainConfig, TrainerConfig, Variant,
};

use crate::synth::SyntheticDriftSpec;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic,
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub delimiter: u8,
    pub split: SplitScheme,
    pub negatives: NegativeMode,
    pub synthetic: SyntheticDriftSpec,

    pub pretrain_periods: usize,
    pub train_periods: usize,
    pub val_periods: usize,
    pub test_periods: usize,

    pub embed_dim: usize,
    pub mlp_hidden: Vec<usize>,
    pub pooling: Pooling,
    pub mlp_init: MlpInit,
    pub base_epochs: usize,
    pub base_batch_size: usize,
    pub base_learning_rate: f64,
    pub pretrain_epochs: usize,

    pub k: usize,
    pub meta_hidden: usize,
    pub meta_epochs: usize,
    pub meta_batch_size: usize,
    pub meta_learning_rate: f64,
    pub residual: bool,
    /// Overrides every variant's own loss weighting when set.
    pub lambda: Option<LambdaMode>,
    pub early_window: EarlyWindow,
    pub advance: AdvanceRule,

    pub variants: Vec<Variant>,
    pub runs: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic,
            delimiter: b',',
            split: SplitScheme::CalendarDay,
            negatives: NegativeMode::Sampled,
            synthetic: SyntheticDriftSpec::default(),
            pretrain_periods: 10,
            train_periods: 10,
            val_periods: 3,
            test_periods: 7,
            embed_dim: 8,
            mlp_hidden: vec![64, 32],
            pooling: Pooling::Mean,
            mlp_init: MlpInit::Glorot,
            base_epochs: 1,
            base_batch_size: 256,
            base_learning_rate: 1e-3,
            pretrain_epochs: 1,
            k: 3,
            meta_hidden: 4,
            meta_epochs: 5,
            meta_batch_size: 256,
            meta_learning_rate: 1e-3,
            residual: false,
            lambda: None,
            early_window: EarlyWindow::Protocol,
            advance: AdvanceRule::Final,
            variants: vec![
                Variant::Iu,
                Variant::Bu(3),
                Variant::Bu(5),
                Variant::Bu(7),
                Variant::GruMulti,
                Variant::GruSingle,
                Variant::GruZero,
                Variant::GruFull,
                Variant::GruUnif,
                Variant::Linear,
            ],
            runs: 5,
            seed: 2020,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| anyhow!("{key}: cannot parse {v:?}: {e}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => bail!("{key}: expected true or false, got {v:?}"),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn core<T, E: Into<anyhow::Error>>(key: &str, r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| e.into().context(format!("key {key}")))
}

impl ExperimentConfig {
    /// Errors are reported as configuration errors.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_inner(text).map_err(|e| anyhow!(Error::Config(format!("{e:#}"))))
    }

    fn parse_inner(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value, got {raw:?}", no + 1))?;
            let (key, value) = (key.trim(), value.trim());
            ensure!(
                seen.insert(key.to_string()),
                "line {}: key {key} given twice",
                no + 1
            );
            cfg.set(key, value)
                .with_context(|| format!("line {}", no + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dataset" => {
                self.dataset = if v == "synthetic" {
                    DatasetSource::Synthetic
                } else {
                    DatasetSource::File(PathBuf::from(v))
                }
            }
            "delimiter" => {
                self.delimiter = match v {
                    "tab" => b'\t',
                    "comma" | "," => b',',
                    _ if v.len() == 1 => v.as_bytes()[0],
                    _ => bail!("delimiter: expected a single character, tab or comma"),
                }
            }
            "split" => self.split = core(key, v.parse())?,
            "negatives" => self.negatives = core(key, v.parse())?,
            "synth_users" => self.synthetic.users = parse_num(key, v)?,
            "synth_items" => self.synthetic.items = parse_num(key, v)?,
            "synth_periods" => self.synthetic.periods = parse_num(key, v)?,
            "synth_interactions_per_period" => {
                self.synthetic.interactions_per_period = parse_num(key, v)?
            }
            "synth_rotation" => self.synthetic.rotation = parse_num(key, v)?,
            "synth_drift" => self.synthetic.drift = parse_num(key, v)?,
            "synth_noise" => self.synthetic.noise = parse_num(key, v)?,
            "synth_categories" => self.synthetic.categories = parse_num(key, v)?,
            "synth_hot_fraction" => self.synthetic.hot_fraction = parse_num(key, v)?,
            "synth_popularity_weight" => self.synthetic.popularity_weight = parse_num(key, v)?,
            "synth_preference_weight" => self.synthetic.preference_weight = parse_num(key, v)?,
            "synth_seed" => self.synthetic.seed = parse_num(key, v)?,
            "pretrain_periods" => self.pretrain_periods = parse_num(key, v)?,
            "train_periods" => self.train_periods = parse_num(key, v)?,
            "val_periods" => self.val_periods = parse_num(key, v)?,
            "test_periods" => self.test_periods = parse_num(key, v)?,
            "embed_dim" => self.embed_dim = parse_num(key, v)?,
            "mlp_hidden" => self.mlp_hidden = parse_list(key, v)?,
            "pooling" => {
                self.pooling = match v {
                    "mean" => Pooling::Mean,
                    "sum" => Pooling::Sum,
                    _ => bail!("pooling: expected mean or sum, got {v:?}"),
                }
            }
            "mlp_init" => {
                self.mlp_init = match v {
                    "uniform" => MlpInit::Uniform,
                    "glorot" => MlpInit::Glorot,
                    _ => bail!("mlp_init: expected uniform or glorot, got {v:?}"),
                }
            }
            "base_epochs" => self.base_epochs = parse_num(key, v)?,
            "base_batch_size" => self.base_batch_size = parse_num(key, v)?,
            "base_learning_rate" => self.base_learning_rate = parse_num(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_num(key, v)?,
            "k" => self.k = parse_num(key, v)?,
            "meta_hidden" => self.meta_hidden = parse_num(key, v)?,
            "meta_epochs" => self.meta_epochs = parse_num(key, v)?,
            "meta_batch_size" => self.meta_batch_size = parse_num(key, v)?,
            "meta_learning_rate" => self.meta_learning_rate = parse_num(key, v)?,
            "residual" => self.residual = parse_bool(key, v)?,
            "lambda" => {
                self.lambda = match v {
                    "default" => None,
                    _ => Some(core(key, v.parse())?),
                }
            }
            "early_window" => {
                self.early_window = match v {
                    "protocol" => EarlyWindow::Protocol,
                    "pad" => EarlyWindow::Pad,
                    _ => bail!("early_window: expected protocol or pad, got {v:?}"),
                }
            }
            "advance" => {
                self.advance = match v {
                    "final" => AdvanceRule::Final,
                    "stale" => AdvanceRule::Stale,
                    _ => bail!("advance: expected final or stale, got {v:?}"),
                }
            }
            "variants" => {
                let mut out: Vec<Variant> = Vec::new();
                for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let parsed: Variant = core(key, name.parse())?;
                    // BU-1 is the incremental baseline under another name
                    let parsed = match parsed {
                        Variant::Bu(1) => Variant::Iu,
                        p => p,
                    };
                    if !out.contains(&parsed) {
                        out.push(parsed);
                    }
                }
                self.variants = out;
            }
            "runs" => self.runs = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            _ => bail!("unknown key {key:?}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.runs >= 1, "runs must be at least 1");
        ensure!(!self.variants.is_empty(), "variants must not be empty");
        ensure!(self.pretrain_periods >= 1, "pretrain_periods must be at least 1");
        ensure!(self.train_periods >= 1, "train_periods must be at least 1");
        ensure!(self.test_periods >= 1, "test_periods must be at least 1");
        ensure!(
            self.base_batch_size >= 1 && self.meta_batch_size >= 1,
            "batch sizes must be at least 1"
        );
        ensure!(
            self.base_learning_rate > 0.0 && self.meta_learning_rate > 0.0,
            "learning rates must be positive"
        );
        if self.dataset == DatasetSource::Synthetic {
            self.synthetic.validate()?;
            self.check_period_count(self.synthetic.periods)
                .map_err(|e| anyhow!("synthetic stream: {e}"))?;
        }
        for &v in &self.variants {
            if v.is_meta() {
                self.trainer(v).validate()?;
            }
        }
        Ok(())
    }

    /// The last period only serves as the evaluation target of the one
    /// before it, so it is not part of any split.
    pub fn check_period_count(&self, periods: usize) -> asmg_core::Result<()> {
        let need =
            self.pretrain_periods + self.train_periods + self.val_periods + self.test_periods + 1;
        if periods != need {
            return Err(Error::Data(format!(
                "{periods} periods do not match pretrain {} + train {} + val {} + test {} + 1 evaluation-only period = {need}",
                self.pretrain_periods, self.train_periods, self.val_periods, self.test_periods
            )));
        }
        Ok(())
    }

    /// Online periods whose metrics enter the results table.
    pub fn test_range(&self) -> std::ops::RangeInclusive<i64> {
        let first = (self.train_periods + self.val_periods + 1) as i64;
        first..=first + self.test_periods as i64 - 1
    }

    pub fn val_range(&self) -> std::ops::RangeInclusive<i64> {
        let first = (self.train_periods + 1) as i64;
        first..=first + self.val_periods as i64 - 1
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|r| self.seed + r).collect()
    }

    pub fn base_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.base_epochs,
            batch_size: self.base_batch_size,
            learning_rate: self.base_learning_rate,
        }
    }

    pub fn pretrain_train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.pretrain_epochs,
            ..self.base_train()
        }
    }

    pub fn trainer(&self, variant: Variant) -> TrainerConfig {
        let mut t = TrainerConfig::for_variant(variant);
        t.k = self.k;
        t.tau = self.train_periods;
        if let Some(l) = self.lambda {
            t.lambda = l;
        }
        t.hidden = self.meta_hidden;
        t.residual = self.residual;
        t.meta = MetaTrainConfig {
            epochs: self.meta_epochs,
            batch_size: self.meta_batch_size,
            learning_rate: self.meta_learning_rate,
        };
        t.early_window = self.early_window;
        t.advance = self.advance;
        t
    }

    pub fn layout(&self, schema: &asmg_core::data::FeatureSchema) -> Result<ModelLayout> {
        Ok(ModelLayout::from_schema(
            schema,
            self.embed_dim,
            self.mlp_hidden.clone(),
            self.pooling,
        )?)
    }

    /// Every key with its resolved value; parsing the result gives back an
    /// equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put(
            "dataset",
            match &self.dataset {
                DatasetSource::Synthetic => "synthetic".into(),
                DatasetSource::File(p) => p.display().to_string(),
            },
        );
        put(
            "delimiter",
            match self.delimiter {
                b'\t' => "tab".into(),
                b',' => "comma".into(),
                c => (c as char).to_string(),
            },
        );
        put("split", self.split.to_string());
        put("negatives", self.negatives.to_string());
        let sy = &self.synthetic;
        put("synth_users", sy.users.to_string());
        put("synth_items", sy.items.to_string());
        put("synth_periods", sy.periods.to_string());
        put(
            "synth_interactions_per_period",
            sy.interactions_per_period.to_string(),
        );
        put("synth_rotation", format!("{:?}", sy.rotation));
        put("synth_drift", format!("{:?}", sy.drift));
        put("synth_noise", format!("{:?}", sy.noise));
        put("synth_categories", sy.categories.to_string());
        put("synth_hot_fraction", format!("{:?}", sy.hot_fraction));
        put(
            "synth_popularity_weight",
            format!("{:?}", sy.popularity_weight),
        );
        put(
            "synth_preference_weight",
            format!("{:?}", sy.preference_weight),
        );
        put("synth_seed", sy.seed.to_string());
        put("pretrain_periods", self.pretrain_periods.to_string());
        put("train_periods", self.train_periods.to_string());
        put("val_periods", self.val_periods.to_string());
        put("test_periods", self.test_periods.to_string());
        put("embed_dim", self.embed_dim.to_string());
        put("mlp_hidden", join(&self.mlp_hidden));
        put(
            "pooling",
            match self.pooling {
                Pooling::Mean => "mean".into(),
                Pooling::Sum => "sum".into(),
            },
        );
        put(
            "mlp_init",
            match self.mlp_init {
                MlpInit::Uniform => "uniform".into(),
                MlpInit::Glorot => "glorot".into(),
            },
        );
        put("base_epochs", self.base_epochs.to_string());
        put("base_batch_size", self.base_batch_size.to_string());
        put(
            "base_learning_rate",
            format!("{:?}", self.base_learning_rate),
        );
        put("pretrain_epochs", self.pretrain_epochs.to_string());
        put("k", self.k.to_string());
        put("meta_hidden", self.meta_hidden.to_string());
        put("meta_epochs", self.meta_epochs.to_string());
        put("meta_batch_size", self.meta_batch_size.to_string());
        put(
            "meta_learning_rate",
            format!("{:?}", self.meta_learning_rate),
        );
        put("residual", self.residual.to_string());
        put(
            "lambda",
            self.lambda
                .map_or_else(|| "default".into(), |l| l.to_string()),
        );
        put(
            "early_window",
            match self.early_window {
                EarlyWindow::Protocol => "protocol".into(),
                EarlyWindow::Pad => "pad".into(),
            },
        );
        put(
            "advance",
            match self.advance {
                AdvanceRule::Final => "final".into(),
                AdvanceRule::Stale => "stale".into(),
            },
        );
        put("variants", join(&self.variants));
        put("runs", self.runs.to_string());
        put("seed", self.seed.to_string());
        s
    }
}
