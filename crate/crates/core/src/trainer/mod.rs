//! Warm-up and online deployment of the meta generator, the incremental and
//! batch-update baselines, and the meta objectives.

mod objective;
mod persist;
mod protocol;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use objective::{
    meta_gradient, meta_objective, meta_update, MetaContext, MetaModel, MetaUpdate,
};
pub use persist::{read_period_log, write_period_log};
pub use protocol::{
    evaluate, online_step, run_asmg, run_baseline_bu, warmup, AsmgState, BaseChain, RunOptions,
    RunOutcome, Setup, Stream,
};

use crate::error::{Error, Result};

/// How the per-step losses of a window are weighted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    LinearDecay,
    Uniform,
    LastOnly,
}

impl fmt::Display for LambdaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LambdaMode::LinearDecay => "linear_decay",
            LambdaMode::Uniform => "uniform",
            LambdaMode::LastOnly => "last_only",
        })
    }
}

impl FromStr for LambdaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_decay" => Ok(LambdaMode::LinearDecay),
            "uniform" => Ok(LambdaMode::Uniform),
            "last_only" => Ok(LambdaMode::LastOnly),
            other => Err(Error::Config(format!(
                "unknown lambda mode {other:?} (expected linear_decay, uniform or last_only)"
            ))),
        }
    }
}

/// Per-step loss weights, oldest step first; they sum to one.
pub fn decay_weights(k: usize, mode: LambdaMode) -> Vec<f64> {
    match mode {
        LambdaMode::LinearDecay => {
            let total = (k * (k + 1) / 2) as f64;
            (1..=k).map(|j| j as f64 / total).collect()
        }
        LambdaMode::Uniform => vec![1.0 / k as f64; k],
        LambdaMode::LastOnly => {
            let mut w = vec![0.0; k];
            if let Some(last) = w.last_mut() {
                *last = 1.0;
            }
            w
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Iu,
    Bu(usize),
    GruMulti,
    GruSingle,
    GruZero,
    GruFull,
    GruUnif,
    Linear,
}

impl Variant {
    pub fn is_meta(self) -> bool {
        !matches!(self, Variant::Iu | Variant::Bu(_))
    }

    pub fn default_lambda(self) -> LambdaMode {
        match self {
            Variant::GruSingle | Variant::Linear | Variant::Iu | Variant::Bu(_) => {
                LambdaMode::LastOnly
            }
            Variant::GruUnif => LambdaMode::Uniform,
            Variant::GruMulti | Variant::GruZero | Variant::GruFull => LambdaMode::LinearDecay,
        }
    }

    /// Whether the hidden state survives from one period to the next.
    pub fn carries_hidden(self) -> bool {
        matches!(
            self,
            Variant::GruMulti | Variant::GruSingle | Variant::GruUnif
        )
    }

    /// Short name used in file names.
    pub fn slug(self) -> String {
        match self {
            Variant::Iu => "iu".into(),
            Variant::Bu(w) => format!("bu{w}"),
            Variant::GruMulti => "grumulti".into(),
            Variant::GruSingle => "grusingle".into(),
            Variant::GruZero => "gruzero".into(),
            Variant::GruFull => "grufull".into(),
            Variant::GruUnif => "gruunif".into(),
            Variant::Linear => "linear".into(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Iu => f.write_str("IU"),
            Variant::Bu(w) => write!(f, "BU-{w}"),
            Variant::GruMulti => f.write_str("ASMG-GRUmulti"),
            Variant::GruSingle => f.write_str("ASMG-GRUsingle"),
            Variant::GruZero => f.write_str("ASMG-GRUzero"),
            Variant::GruFull => f.write_str("ASMG-GRUfull"),
            Variant::GruUnif => f.write_str("ASMG-GRUunif"),
            Variant::Linear => f.write_str("ASMG-Linear"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim();
        let bare = key
            .strip_prefix("ASMG-")
            .unwrap_or(key)
            .to_ascii_lowercase();
        let v = match bare.as_str() {
            "iu" => Variant::Iu,
            "grumulti" => Variant::GruMulti,
            "grusingle" => Variant::GruSingle,
            "gruzero" => Variant::GruZero,
            "grufull" => Variant::GruFull,
            "gruunif" => Variant::GruUnif,
            "linear" => Variant::Linear,
            other => {
                let w = other
                    .strip_prefix("bu-")
                    .or_else(|| other.strip_prefix("bu"))
                    .and_then(|w| w.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))?;
                if w == 0 {
                    return Err(Error::Config("BU window must be at least 1".into()));
                }
                Variant::Bu(w)
            }
        };
        Ok(v)
    }
}

/// What to do while fewer than `k` models exist during warm-up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyWindow {
    /// Skip meta training until `k` models exist.
    Protocol,
    /// Train on the shorter window from a zero hidden state.
    Pad,
}

/// Which generator weights consume the oldest window model when the hidden
/// state moves forward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvanceRule {
    /// Weights after this period's meta update.
    Final,
    /// Weights before this period's meta update.
    Stale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        MetaTrainConfig {
            epochs: 5,
            batch_size: 256,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub variant: Variant,
    pub k: usize,
    pub tau: usize,
    pub lambda: LambdaMode,
    pub hidden: usize,
    pub residual: bool,
    pub meta: MetaTrainConfig,
    pub early_window: EarlyWindow,
    pub advance: AdvanceRule,
}

impl TrainerConfig {
    pub fn for_variant(variant: Variant) -> Self {
        TrainerConfig {
            variant,
            k: 3,
            tau: 10,
            lambda: variant.default_lambda(),
            hidden: 4,
            residual: false,
            meta: MetaTrainConfig::default(),
            early_window: EarlyWindow::Protocol,
            advance: AdvanceRule::Final,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.tau == 0 {
            return Err(Error::Config("k and tau must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("meta hidden size must be at least 1".into()));
        }
        if self.meta.batch_size == 0 {
            return Err(Error::Config("meta batch size must be at least 1".into()));
        }
        let forced = match self.variant {
            Variant::GruSingle | Variant::Linear => Some(LambdaMode::LastOnly),
            Variant::GruUnif => Some(LambdaMode::Uniform),
            _ => None,
        };
        if let Some(mode) = forced {
            if self.lambda != mode {
                return Err(Error::Config(format!(
                    "{} requires lambda mode {mode}, got {}",
                    self.variant, self.lambda
                )));
            }
        }
        Ok(())
    }
}

/// Metrics and timings of one served period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodLog {
    pub period: i64,
    pub variant: String,
    pub auc: f64,
    pub logloss: f64,
    pub meta_seconds: f64,
    pub base_seconds: f64,
}
