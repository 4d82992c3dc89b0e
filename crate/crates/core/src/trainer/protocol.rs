use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use super::objective::{meta_update, MetaContext, MetaModel};
use super::persist::{self, SavedRun};
use super::{decay_weights, AdvanceRule, EarlyWindow, PeriodLog, TrainerConfig, Variant};
use crate::data::{PeriodDataset, Sample};
use crate::error::{Error, Result};
use crate::meta::{
    linear_combine, serve, GroupMap, HiddenStateStore, LinearMetaParams, MetaGeneratorParams,
};
use crate::metrics::{auc, log_loss};
use crate::model::{incremental_update, predict, BaseModelParams, ModelLayout, TrainConfig};

/// Period datasets split into a pre-training prefix and the update periods.
///
/// Update period `t >= 1` is `periods[pretrain + t - 1]`; periods at or below
/// zero reach back into the pre-training prefix.
#[derive(Clone, Copy, Debug)]
pub struct Stream<'a> {
    pub periods: &'a [PeriodDataset],
    pub pretrain: usize,
}

impl<'a> Stream<'a> {
    pub fn new(periods: &'a [PeriodDataset], pretrain: usize) -> Result<Self> {
        if periods.len() < pretrain + 2 {
            return Err(Error::Data(format!(
                "{} periods cannot hold {pretrain} pre-training periods plus two update periods",
                periods.len()
            )));
        }
        Ok(Stream { periods, pretrain })
    }

    pub fn data(&self, t: i64) -> Result<&'a [Sample]> {
        let idx = self.pretrain as i64 + t - 1;
        if idx < 0 || idx as usize >= self.periods.len() {
            return Err(Error::Data(format!("period {t} is outside the stream")));
        }
        Ok(&self.periods[idx as usize].samples)
    }

    /// Earliest period index reachable, counting the pre-training prefix.
    pub fn first(&self) -> i64 {
        1 - self.pretrain as i64
    }

    /// Newest period that still has a following period to evaluate on.
    pub fn last_update(&self) -> i64 {
        (self.periods.len() - self.pretrain) as i64 - 1
    }

    /// Every sample of the pre-training periods, in time order.
    pub fn pretrain_samples(&self) -> Vec<&'a Sample> {
        self.periods[..self.pretrain]
            .iter()
            .flat_map(|p| p.samples.iter())
            .collect()
    }
}

/// The incremental chain `theta_0, theta_1, ...` with per-period training
/// time; shared by every variant that trains on it.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseChain {
    pub params: Vec<BaseModelParams>,
    pub seconds: Vec<f64>,
}

impl BaseChain {
    pub fn compute(
        layout: &ModelLayout,
        theta0: &BaseModelParams,
        stream: Stream<'_>,
        upto: i64,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut params = vec![theta0.clone()];
        let mut seconds = vec![0.0];
        for t in 1..=upto {
            let data: Vec<&Sample> = stream.data(t)?.iter().collect();
            let start = Instant::now();
            let next =
                incremental_update(layout, params.last().expect("theta_0"), &data, cfg, seed, t)?;
            seconds.push(start.elapsed().as_secs_f64());
            params.push(next);
        }
        Ok(BaseChain { params, seconds })
    }
}

/// Everything a run needs besides its evolving state.
#[derive(Clone, Copy, Debug)]
pub struct Setup<'a> {
    pub layout: &'a ModelLayout,
    pub map: &'a GroupMap,
    pub stream: Stream<'a>,
    pub trainer: &'a TrainerConfig,
    pub base: &'a TrainConfig,
    pub seed: u64,
    /// Precomputed incremental chain; periods it lacks are trained on demand.
    pub chain: Option<&'a BaseChain>,
}

impl Setup<'_> {
    fn ctx(&self) -> MetaContext<'_> {
        MetaContext {
            layout: self.layout,
            map: self.map,
        }
    }

    /// `theta_{t}` from `theta_{t-1}` and the time it took.
    fn next_base(&self, prev: &BaseModelParams, t: i64) -> Result<(BaseModelParams, f64)> {
        if let Some(chain) = self.chain {
            if let (Some(p), Some(&s)) =
                (chain.params.get(t as usize), chain.seconds.get(t as usize))
            {
                return Ok((p.clone(), s));
            }
        }
        let data: Vec<&Sample> = self.stream.data(t)?.iter().collect();
        let start = Instant::now();
        let next = incremental_update(self.layout, prev, &data, self.base, self.seed, t)?;
        Ok((next, start.elapsed().as_secs_f64()))
    }
}

/// State of an ASMG run after the base model of period `t` exists.
#[derive(Clone, Debug, PartialEq)]
pub struct AsmgState {
    pub t: i64,
    /// Base models still needed for future windows, keyed by period.
    pub models: BTreeMap<i64, BaseModelParams>,
    pub meta: MetaModel,
    /// Carried hidden state; present only for variants that carry it.
    pub store: Option<HiddenStateStore>,
    pub meta_updates: usize,
    pub logs: Vec<PeriodLog>,
    /// Checksum of every base model produced so far.
    pub checksums: Vec<(i64, u64)>,
}

fn window_len(cfg: &TrainerConfig, t: i64) -> Option<usize> {
    if t < 1 {
        return None;
    }
    let t = t as usize;
    match (cfg.variant, cfg.early_window) {
        (Variant::GruFull, _) => Some(t),
        (_, EarlyWindow::Protocol) => (t >= cfg.k).then_some(cfg.k),
        (_, EarlyWindow::Pad) => Some(t.min(cfg.k)),
    }
}

fn initial_meta(setup: &Setup<'_>) -> Result<MetaModel> {
    let cfg = setup.trainer;
    Ok(match cfg.variant {
        Variant::Linear => MetaModel::Linear(LinearMetaParams::last_one_hot(cfg.k)),
        _ => MetaModel::Gru(MetaGeneratorParams::init(
            setup.map,
            cfg.hidden,
            cfg.k,
            cfg.residual,
            setup.seed,
        )?),
    })
}

fn window_of(state: &AsmgState, t: i64, len: usize) -> Result<Vec<&[f64]>> {
    (t - len as i64 + 1..=t)
        .map(|i| {
            state
                .models
                .get(&i)
                .map(|p| p.theta.as_slice())
                .ok_or_else(|| {
                    Error::Invalid(format!("base model of period {i} is no longer held"))
                })
        })
        .collect()
}

/// Carried state to start a window of `len` models ending at `t` from.
fn hidden_for<'s>(
    setup: &Setup<'_>,
    state: &'s AsmgState,
    t: i64,
    len: usize,
) -> Result<Option<&'s HiddenStateStore>> {
    let cfg = setup.trainer;
    if !cfg.variant.carries_hidden() || len != cfg.k {
        return Ok(None);
    }
    let store = state
        .store
        .as_ref()
        .ok_or_else(|| Error::Invalid("missing hidden store".into()))?;
    let want = t - cfg.k as i64;
    if store.tag != want {
        return Err(Error::Invalid(format!(
            "hidden store is tagged {}, period {t} needs {want}",
            store.tag
        )));
    }
    Ok(Some(store))
}

/// Meta update on the window ending at `t` against targets up to `t + 1`,
/// followed by the hidden-state advance.
fn train_meta(setup: &Setup<'_>, state: &mut AsmgState, t: i64) -> Result<()> {
    let cfg = setup.trainer;
    let Some(len) = window_len(cfg, t) else {
        return Ok(());
    };
    let window = window_of(state, t, len)?;
    let datasets: Vec<&[Sample]> = (t - len as i64 + 2..=t + 1)
        .map(|i| setup.stream.data(i))
        .collect::<Result<_>>()?;
    let lambda = decay_weights(len, cfg.lambda);
    let h = hidden_for(setup, state, t, len)?;
    let model = match &state.meta {
        // a short padded window sees only the newest mixing weights
        MetaModel::Linear(l) if len < l.alpha.len() => MetaModel::Linear(LinearMetaParams {
            alpha: l.alpha[l.alpha.len() - len..].to_vec(),
        }),
        m => m.clone(),
    };
    let update = meta_update(
        setup.ctx(),
        &model,
        &window,
        h,
        &datasets,
        &lambda,
        &cfg.meta,
        setup.seed,
        t,
    )?;
    let before = std::mem::replace(&mut state.meta, update.model);
    if let (MetaModel::Linear(full), MetaModel::Linear(short)) = (&before, &state.meta) {
        if short.alpha.len() < full.alpha.len() {
            let mut alpha = full.alpha.clone();
            let off = alpha.len() - short.alpha.len();
            alpha[off..].copy_from_slice(&short.alpha);
            state.meta = MetaModel::Linear(LinearMetaParams { alpha });
        }
    }
    state.meta_updates += 1;

    if cfg.variant.carries_hidden() && t >= cfg.k as i64 {
        let consumed = t - cfg.k as i64 + 1;
        let theta = state
            .models
            .get(&consumed)
            .ok_or_else(|| {
                Error::Invalid(format!("base model of period {consumed} is no longer held"))
            })?
            .theta
            .clone();
        let weights = match cfg.advance {
            AdvanceRule::Final => &state.meta,
            AdvanceRule::Stale => &before,
        };
        let MetaModel::Gru(meta) = weights else {
            return Err(Error::Invalid("hidden state needs a GRU generator".into()));
        };
        let store = state
            .store
            .as_mut()
            .ok_or_else(|| Error::Invalid("missing hidden store".into()))?;
        if store.tag != consumed - 1 {
            return Err(Error::Invalid(format!(
                "hidden store is tagged {}, cannot consume period {consumed}",
                store.tag
            )));
        }
        store.advance(meta, setup.map, &theta)?;
    }
    Ok(())
}

fn evict(cfg: &TrainerConfig, state: &mut AsmgState) {
    if cfg.variant == Variant::GruFull {
        return;
    }
    // the next window ends at t and starts k - 1 periods earlier
    let keep_from = state.t - cfg.k as i64 + 1;
    state.models.retain(|&i, _| i >= keep_from);
}

fn push_base(state: &mut AsmgState, t: i64, params: BaseModelParams) {
    state.checksums.push((t, params.checksum()));
    state.models.insert(t, params);
    state.t = t;
}

/// Offline phase: produces `theta_1 .. theta_{tau+1}` and trains the
/// generator at every warm-up period with a full window.
pub fn warmup(setup: &Setup<'_>, theta0: &BaseModelParams) -> Result<AsmgState> {
    let cfg = setup.trainer;
    cfg.validate()?;
    let tau = cfg.tau as i64;
    if setup.stream.last_update() < tau + 1 {
        return Err(Error::Data(format!(
            "warm-up with tau = {tau} needs at least {} update periods after pre-training, the stream has {}",
            tau + 2,
            setup.stream.last_update() + 1
        )));
    }
    let store = cfg
        .variant
        .carries_hidden()
        .then(|| HiddenStateStore::zeros(setup.map.n_coords(), cfg.hidden, 0));
    let mut state = AsmgState {
        t: 0,
        models: BTreeMap::new(),
        meta: initial_meta(setup)?,
        store,
        meta_updates: 0,
        logs: Vec::new(),
        checksums: Vec::new(),
    };
    let mut prev = theta0.clone();
    for t in 1..=tau + 1 {
        let (next, _) = setup.next_base(&prev, t)?;
        push_base(&mut state, t, next.clone());
        prev = next;
        if t <= tau {
            train_meta(setup, &mut state, t)?;
        }
        evict(cfg, &mut state);
    }
    Ok(state)
}

/// Parameters served during period `t + 1`.
fn serving_params(setup: &Setup<'_>, state: &AsmgState) -> Result<Vec<f64>> {
    let cfg = setup.trainer;
    let t = state.t;
    let len = match cfg.variant {
        Variant::GruFull => t as usize,
        _ => (t as usize).min(cfg.k),
    };
    let window = window_of(state, t, len)?;
    match &state.meta {
        MetaModel::Linear(l) => linear_combine(&l.alpha[l.alpha.len() - len..], &window),
        MetaModel::Gru(meta) => {
            let zeros;
            let h = match hidden_for(setup, state, t, len)? {
                Some(h) => h,
                None => {
                    zeros =
                        HiddenStateStore::zeros(setup.map.n_coords(), meta.hidden, t - len as i64);
                    &zeros
                }
            };
            serve(meta, setup.map, &window, h)
        }
    }
}

/// AUC and LogLoss of `theta` on `samples`.
pub fn evaluate(layout: &ModelLayout, theta: &[f64], samples: &[Sample]) -> Result<(f64, f64)> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let scores = predict(layout, theta, &refs)?;
    let labels: Vec<f64> = samples.iter().map(|s| f64::from(s.label)).collect();
    Ok((auc(&scores, &labels)?, log_loss(&scores, &labels)))
}

/// Generate, evaluate on the next period, update the base model, update the
/// generator and advance its hidden state. The input state is untouched when
/// any step fails.
pub fn online_step(setup: &Setup<'_>, state: &AsmgState) -> Result<(PeriodLog, AsmgState)> {
    let t = state.t;
    let served = serving_params(setup, state)?;
    let (auc, logloss) = evaluate(setup.layout, &served, setup.stream.data(t + 1)?)?;

    let mut next = state.clone();
    let (base, base_seconds) = setup.next_base(&state.models[&t], t + 1)?;
    push_base(&mut next, t + 1, base);
    let start = Instant::now();
    train_meta(setup, &mut next, t)?;
    let meta_seconds = start.elapsed().as_secs_f64();
    evict(setup.trainer, &mut next);

    let log = PeriodLog {
        period: t,
        variant: setup.trainer.variant.to_string(),
        auc,
        logloss,
        meta_seconds,
        base_seconds,
    };
    next.logs.push(log.clone());
    Ok((log, next))
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory for resumable state; nothing is persisted without one.
    pub dir: Option<PathBuf>,
    /// Stop after serving this period, leaving resumable state behind.
    pub stop_after: Option<i64>,
    /// Opaque description of the configuration; a saved state written under
    /// a different tag is not resumed.
    pub tag: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub logs: Vec<PeriodLog>,
    pub checksums: Vec<(i64, u64)>,
    pub completed: bool,
}

/// Warm-up then online steps for every period up to the end of the stream.
pub fn run_asmg(
    setup: &Setup<'_>,
    theta0: &BaseModelParams,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let cfg = setup.trainer;
    if !cfg.variant.is_meta() {
        return Err(Error::Config(format!(
            "{} is not a meta-generator variant",
            cfg.variant
        )));
    }
    let resumed = match &opts.dir {
        Some(dir) => persist::load_asmg(dir, &opts.tag, setup)?,
        None => None,
    };
    let mut state = match resumed {
        Some(s) => s,
        None => {
            let s = warmup(setup, theta0)?;
            if let Some(dir) = &opts.dir {
                persist::save_asmg(dir, &opts.tag, setup, &s)?;
            }
            s
        }
    };
    let last = setup.stream.last_update();
    while state.t <= last {
        if opts.stop_after.is_some_and(|s| state.t > s) {
            return Ok(RunOutcome {
                logs: state.logs,
                checksums: state.checksums,
                completed: false,
            });
        }
        let (_, next) = online_step(setup, &state)?;
        state = next;
        if let Some(dir) = &opts.dir {
            persist::save_asmg(dir, &opts.tag, setup, &state)?;
        }
    }
    Ok(RunOutcome {
        logs: state.logs,
        checksums: state.checksums,
        completed: true,
    })
}

/// Batch update over the newest `w` periods; `w = 1` is the incremental
/// baseline. Models from period `tau + 1` on are evaluated on the period that
/// follows them before it is trained on.
pub fn run_baseline_bu(
    setup: &Setup<'_>,
    w: usize,
    theta0: &BaseModelParams,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    if w == 0 {
        return Err(Error::Config("BU window must be at least 1".into()));
    }
    let tau = setup.trainer.tau as i64;
    let name = if w == 1 { Variant::Iu } else { Variant::Bu(w) }.to_string();
    let mut run = match &opts.dir {
        Some(dir) => persist::load_bu(dir, &opts.tag, setup.layout)?,
        None => None,
    }
    .unwrap_or(SavedRun {
        t: 0,
        params: theta0.clone(),
        logs: Vec::new(),
        checksums: Vec::new(),
    });

    let train = |prev: &BaseModelParams, t: i64| -> Result<(BaseModelParams, f64)> {
        if w == 1 {
            return setup.next_base(prev, t);
        }
        let from = (t - w as i64 + 1).max(setup.stream.first());
        let mut data: Vec<&Sample> = Vec::new();
        for i in from..=t {
            data.extend(setup.stream.data(i)?.iter());
        }
        let start = Instant::now();
        let next = incremental_update(setup.layout, prev, &data, setup.base, setup.seed, t)?;
        Ok((next, start.elapsed().as_secs_f64()))
    };

    let last = setup.stream.last_update();
    while run.t <= last {
        let t = run.t;
        if t > tau && opts.stop_after.is_some_and(|s| t > s) {
            return Ok(RunOutcome {
                logs: run.logs,
                checksums: run.checksums,
                completed: false,
            });
        }
        let eval = if t > tau {
            Some(evaluate(
                setup.layout,
                &run.params.theta,
                setup.stream.data(t + 1)?,
            )?)
        } else {
            None
        };
        let (next, seconds) = train(&run.params, t + 1)?;
        if let Some((auc, logloss)) = eval {
            run.logs.push(PeriodLog {
                period: t,
                variant: name.clone(),
                auc,
                logloss,
                meta_seconds: 0.0,
                base_seconds: seconds,
            });
        }
        run.checksums.push((t + 1, next.checksum()));
        run.params = next;
        run.t = t + 1;
        if let (Some(dir), true) = (&opts.dir, t >= tau) {
            persist::save_bu(dir, &opts.tag, setup.layout, &run)?;
        }
    }
    Ok(RunOutcome {
        logs: run.logs,
        checksums: run.checksums,
        completed: true,
    })
}
