use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::batch::{Batch, SubsetPlan};
use super::forward::batch_loss;
use super::layout::ModelLayout;
use super::BaseModelParams;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::grad::{Tape, Tensor};
use crate::rng::{purpose, rng_for};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 256,
            learning_rate: 1e-3,
        }
    }
}

/// Adaptive moment estimation over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let step = self.learning_rate * bc2.sqrt() / bc1;
        for i in 0..params.len() {
            let g = grad[i];
            let m = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            self.m[i] = m;
            self.v[i] = v;
            params[i] -= step * m / (v.sqrt() + self.epsilon);
        }
    }
}

/// Loss and full-length gradient of one batch.
pub fn loss_and_grad(layout: &ModelLayout, theta: &[f64], batch: Batch) -> Result<(f64, Vec<f64>)> {
    let plan = SubsetPlan::touched(layout, std::slice::from_ref(&batch));
    let mut grad = vec![0.0; theta.len()];
    let loss = accumulate_grad(layout, theta, &plan, &mut grad)?;
    Ok((loss, grad))
}

fn accumulate_grad(
    layout: &ModelLayout,
    theta: &[f64],
    plan: &SubsetPlan,
    grad: &mut [f64],
) -> Result<f64> {
    let mut tape = Tape::new();
    let flat = tape.leaf(plan.gather(theta));
    let loss = batch_loss(&mut tape, layout, plan, flat, 0)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    let mut grads = tape.backward(loss, Tensor::scalar(1.0))?;
    plan.scatter_add(grads.take(flat).data(), grad);
    Ok(value)
}

/// Trains a copy of `prev` on `samples` and tags the result with `period`.
///
/// Mini-batches are reshuffled every epoch from a stream keyed by
/// `(seed, period, epoch)`. The optimizer state starts fresh.
pub fn incremental_update(
    layout: &ModelLayout,
    prev: &BaseModelParams,
    samples: &[&Sample],
    cfg: &TrainConfig,
    seed: u64,
    period: i64,
) -> Result<BaseModelParams> {
    train_with_purpose(
        layout,
        prev,
        samples,
        cfg,
        seed,
        period,
        purpose::BASE_SHUFFLE,
    )
}

/// Trains `init` on the pooled pre-training samples; the result is the
/// period-0 model every run starts from.
pub fn pretrain(
    layout: &ModelLayout,
    init: &BaseModelParams,
    samples: &[&Sample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<BaseModelParams> {
    if samples.is_empty() {
        return Err(Error::Data("no pre-training samples".into()));
    }
    train_with_purpose(
        layout,
        init,
        samples,
        cfg,
        seed,
        0,
        purpose::PRETRAIN_SHUFFLE,
    )
}

fn train_with_purpose(
    layout: &ModelLayout,
    prev: &BaseModelParams,
    samples: &[&Sample],
    cfg: &TrainConfig,
    seed: u64,
    period: i64,
    tag: u64,
) -> Result<BaseModelParams> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if prev.theta.len() != layout.n_params() {
        return Err(Error::Invalid(format!(
            "parameter vector has {} entries, layout needs {}",
            prev.theta.len(),
            layout.n_params()
        )));
    }
    let mut theta = prev.theta.clone();
    let mut adam = Adam::new(theta.len(), cfg.learning_rate);
    let mut grad = vec![0.0; theta.len()];
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = rng_for(seed, &[tag, period as u64, epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let picked: Vec<&Sample> = chunk.iter().map(|&i| samples[i]).collect();
            let batch = Batch::from_samples(layout, &picked)?;
            let plan = SubsetPlan::touched(layout, std::slice::from_ref(&batch));
            let loss = accumulate_grad(layout, &theta, &plan, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite base loss {loss} in period {period}, epoch {epoch}, batch {b}"
                )));
            }
            adam.step(&mut theta, &grad);
            for &c in plan.coords() {
                grad[c] = 0.0;
            }
        }
    }
    Ok(BaseModelParams { theta, period })
}
