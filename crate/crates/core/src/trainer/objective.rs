use std::rc::Rc;

use rand::seq::SliceRandom;

use super::MetaTrainConfig;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::grad::{Tape, Tensor, Var};
use crate::meta::{
    linear_combine_on_tape, meta_nodes, rollout_on_tape, GroupMap, HiddenStateStore,
    LinearMetaParams, MetaGeneratorParams, MetaNodes,
};
use crate::model::{batch_loss, Adam, Batch, ModelLayout, SubsetPlan};
use crate::rng::{purpose, rng_for};

/// Trainable part of an ASMG variant.
#[derive(Clone, Debug, PartialEq)]
pub enum MetaModel {
    Gru(MetaGeneratorParams),
    Linear(LinearMetaParams),
}

impl MetaModel {
    pub fn params(&self) -> &[f64] {
        match self {
            MetaModel::Gru(m) => m.omega(),
            MetaModel::Linear(l) => &l.alpha,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            MetaModel::Gru(m) => m.omega_mut(),
            MetaModel::Linear(l) => &mut l.alpha,
        }
    }
}

/// Fixed structure shared by every objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct MetaContext<'a> {
    pub layout: &'a ModelLayout,
    pub map: &'a GroupMap,
}

enum Leaves {
    Gru(MetaNodes),
    Linear(Var),
}

impl Leaves {
    fn vars(&self) -> Vec<Var> {
        match self {
            Leaves::Gru(n) => n.all().to_vec(),
            Leaves::Linear(a) => vec![*a],
        }
    }
}

fn check_alignment(
    model: &MetaModel,
    window: &[&[f64]],
    n_targets: usize,
    lambda: &[f64],
) -> Result<()> {
    if window.is_empty() || window.len() != n_targets || window.len() != lambda.len() {
        return Err(Error::Invalid(format!(
            "window of {} models, {} datasets and {} loss weights do not line up",
            window.len(),
            n_targets,
            lambda.len()
        )));
    }
    if lambda.iter().any(|&l| !(l >= 0.0)) || (lambda.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::Invalid(format!(
            "loss weights {lambda:?} must be non-negative and sum to 1"
        )));
    }
    if let MetaModel::Linear(l) = model {
        if l.alpha.len() != window.len() {
            return Err(Error::Invalid(format!(
                "{} mixing weights for a window of {}",
                l.alpha.len(),
                window.len()
            )));
        }
        if lambda[..lambda.len() - 1].iter().any(|&l| l != 0.0) {
            return Err(Error::Invalid(
                "the linear combiner only has a last-step output".into(),
            ));
        }
    }
    Ok(())
}

/// Builds `sum_i lambda_i * L(theta*_i | batch_i)` on `tape`. Steps with zero
/// weight contribute no batch and no loss term.
fn build_objective(
    tape: &mut Tape,
    ctx: MetaContext<'_>,
    model: &MetaModel,
    window: &[&[f64]],
    h_init: Option<&HiddenStateStore>,
    batches: Vec<Option<Batch>>,
    lambda: &[f64],
) -> Result<(Var, Leaves)> {
    let mut slot = vec![None; batches.len()];
    let mut present = Vec::new();
    for (i, b) in batches.into_iter().enumerate() {
        if let Some(b) = b {
            slot[i] = Some(present.len());
            present.push(b);
        }
    }
    // the rollout covers every coordinate, referenced or not
    let plan = SubsetPlan::full(ctx.layout, &present);
    let inputs: Vec<Var> = window
        .iter()
        .map(|theta| tape.constant(plan.gather(theta)))
        .collect();

    let (outputs, leaves) = match model {
        MetaModel::Gru(meta) => {
            let nodes = meta_nodes(tape, meta)?;
            let coords = plan.coords();
            let groups: Rc<[usize]> = coords.iter().map(|&c| ctx.map.group_of(c)).collect();
            let d = meta.hidden;
            let h0 = match h_init {
                Some(store) => {
                    if store.hidden != d || store.h.len() != ctx.map.n_coords() * d {
                        return Err(Error::Invalid(
                            "hidden store does not match the generator".into(),
                        ));
                    }
                    let mut rows = Vec::with_capacity(coords.len() * d);
                    for &c in coords {
                        rows.extend_from_slice(&store.h[c * d..(c + 1) * d]);
                    }
                    Tensor::new(vec![coords.len(), d], rows)?
                }
                None => Tensor::zeros(&[coords.len(), d]),
            };
            let h0 = tape.constant(h0);
            let roll = rollout_on_tape(tape, meta.residual, &nodes, groups, &inputs, h0)?;
            (roll.outputs, Leaves::Gru(nodes))
        }
        MetaModel::Linear(lin) => {
            let alpha = tape.leaf(Tensor::column(lin.alpha.clone()));
            let out = linear_combine_on_tape(tape, alpha, &inputs)?;
            (vec![out; window.len()], Leaves::Linear(alpha))
        }
    };

    let mut total: Option<Var> = None;
    for (i, &w) in lambda.iter().enumerate() {
        let Some(b) = slot[i] else { continue };
        let l = batch_loss(tape, ctx.layout, &plan, outputs[i], b)?;
        let weighted = tape.scale(l, w)?;
        total = Some(match total {
            None => weighted,
            Some(acc) => tape.add(acc, weighted)?,
        });
    }
    let total = total.ok_or_else(|| Error::Invalid("objective has no weighted term".into()))?;
    Ok((total, leaves))
}

/// Weighted sum of each step's loss on its full target dataset.
pub fn meta_objective(
    ctx: MetaContext<'_>,
    model: &MetaModel,
    window: &[&[f64]],
    h_init: Option<&HiddenStateStore>,
    datasets: &[&[Sample]],
    lambda: &[f64],
) -> Result<f64> {
    check_alignment(model, window, datasets.len(), lambda)?;
    let batches = full_batches(ctx, datasets, lambda)?;
    let mut tape = Tape::new();
    let (loss, _) = build_objective(&mut tape, ctx, model, window, h_init, batches, lambda)?;
    Ok(tape.value(loss).data()[0])
}

/// [`meta_objective`] together with its gradient in [`MetaModel::params`] order.
pub fn meta_gradient(
    ctx: MetaContext<'_>,
    model: &MetaModel,
    window: &[&[f64]],
    h_init: Option<&HiddenStateStore>,
    datasets: &[&[Sample]],
    lambda: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_alignment(model, window, datasets.len(), lambda)?;
    let batches = full_batches(ctx, datasets, lambda)?;
    let mut tape = Tape::new();
    let (loss, leaves) = build_objective(&mut tape, ctx, model, window, h_init, batches, lambda)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss, Tensor::scalar(1.0))?;
    let mut flat = Vec::with_capacity(model.params().len());
    for v in leaves.vars() {
        flat.extend_from_slice(grads.get(v).data());
    }
    Ok((value, flat))
}

fn full_batches(
    ctx: MetaContext<'_>,
    datasets: &[&[Sample]],
    lambda: &[f64],
) -> Result<Vec<Option<Batch>>> {
    datasets
        .iter()
        .zip(lambda)
        .map(|(ds, &w)| {
            if w == 0.0 {
                return Ok(None);
            }
            let refs: Vec<&Sample> = ds.iter().collect();
            Batch::from_samples(ctx.layout, &refs).map(Some)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaUpdate {
    pub model: MetaModel,
    /// Mean mini-batch objective of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Adam on the meta parameters with the window held constant.
///
/// One epoch walks the newest target dataset in shuffled mini-batches; the
/// older targets are walked in step with it and wrap around when shorter.
#[allow(clippy::too_many_arguments)]
pub fn meta_update(
    ctx: MetaContext<'_>,
    model: &MetaModel,
    window: &[&[f64]],
    h_init: Option<&HiddenStateStore>,
    datasets: &[&[Sample]],
    lambda: &[f64],
    cfg: &MetaTrainConfig,
    seed: u64,
    period: i64,
) -> Result<MetaUpdate> {
    check_alignment(model, window, datasets.len(), lambda)?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("meta batch size must be at least 1".into()));
    }
    if let Some(i) = datasets
        .iter()
        .zip(lambda)
        .position(|(d, &w)| w > 0.0 && d.is_empty())
    {
        return Err(Error::Data(format!(
            "meta target dataset {i} of period {period} is empty"
        )));
    }
    let mut model = model.clone();
    let mut adam = Adam::new(model.params().len(), cfg.learning_rate);
    let mut orders: Vec<Vec<usize>> = datasets.iter().map(|d| (0..d.len()).collect()).collect();
    let newest = datasets.last().map_or(0, |d| d.len());
    let steps = newest.div_ceil(cfg.batch_size);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        for (i, order) in orders.iter_mut().enumerate() {
            let mut rng = rng_for(
                seed,
                &[purpose::META_SHUFFLE, period as u64, epoch as u64, i as u64],
            );
            order.sort_unstable();
            order.shuffle(&mut rng);
        }
        let mut sum = 0.0;
        for step in 0..steps {
            let batches = datasets
                .iter()
                .zip(lambda)
                .zip(&orders)
                .map(|((ds, &w), order)| {
                    if w == 0.0 {
                        return Ok(None);
                    }
                    let size = cfg.batch_size.min(ds.len());
                    let picked: Vec<&Sample> = (0..size)
                        .map(|j| &ds[order[(step * cfg.batch_size + j) % ds.len()]])
                        .collect();
                    Batch::from_samples(ctx.layout, &picked).map(Some)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut tape = Tape::new();
            let (loss, leaves) =
                build_objective(&mut tape, ctx, &model, window, h_init, batches, lambda)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite meta loss {value} in period {period}, epoch {epoch}, step {step}"
                )));
            }
            let grads = tape.backward(loss, Tensor::scalar(1.0))?;
            let mut flat = Vec::with_capacity(model.params().len());
            for v in leaves.vars() {
                flat.extend_from_slice(grads.get(v).data());
            }
            adam.step(model.params_mut(), &flat);
            sum += value;
        }
        epoch_losses.push(if steps == 0 { 0.0 } else { sum / steps as f64 });
    }
    Ok(MetaUpdate {
        model,
        epoch_losses,
    })
}
