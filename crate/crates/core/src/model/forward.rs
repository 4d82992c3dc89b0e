use std::rc::Rc;

use super::batch::{Batch, FeatureRows, SubsetPlan};
use super::layout::{ModelLayout, Pooling};
use crate::data::Sample;
use crate::error::Result;
use crate::grad::{Tape, Tensor, Var};

/// Scores are clipped to `[CLIP, 1 - CLIP]` before taking logs.
pub const CLIP: f64 = 1e-7;

/// Tape handles for the model parameters, in compact form.
#[derive(Clone, Debug)]
pub struct ParamNodes {
    pub tables: Vec<Var>,
    /// `(weight [in, out], bias [1, out])` per dense layer.
    pub layers: Vec<(Var, Var)>,
}

/// Slices a `[C, 1]` compact parameter column into tables and layers.
pub fn param_nodes(
    tape: &mut Tape,
    layout: &ModelLayout,
    plan: &SubsetPlan,
    flat: Var,
) -> Result<ParamNodes> {
    let d = layout.embed_dim;
    let mut tables = Vec::with_capacity(layout.features.len());
    for f in 0..layout.features.len() {
        let (start, rows) = plan.table_range(f);
        let idx: Rc<[usize]> = (start..start + rows * d).collect();
        let col = tape.gather(flat, idx)?;
        tables.push(tape.reshape(col, &[rows, d])?);
    }
    let emb = layout.embedding_params();
    let base = plan.mlp_start();
    let mut layers = Vec::new();
    for l in layout.layers() {
        let w0 = base + l.weight_offset - emb;
        let b0 = base + l.bias_offset - emb;
        let w = tape.gather(flat, (w0..w0 + l.input * l.output).collect())?;
        let w = tape.reshape(w, &[l.input, l.output])?;
        let b = tape.gather(flat, (b0..b0 + l.output).collect())?;
        let b = tape.reshape(b, &[1, l.output])?;
        layers.push((w, b));
    }
    Ok(ParamNodes { tables, layers })
}

/// Pre-sigmoid scores `[B, 1]`: concatenated feature embeddings through
/// ReLU hidden layers and a linear output unit.
pub fn logits(
    tape: &mut Tape,
    layout: &ModelLayout,
    nodes: &ParamNodes,
    batch: &Batch,
) -> Result<Var> {
    let mut parts = Vec::with_capacity(layout.features.len());
    for (table, rows) in nodes.tables.iter().zip(&batch.features) {
        let v = match rows {
            FeatureRows::Single(r) => tape.gather(*table, r.clone())?,
            FeatureRows::Multi(lists) => match layout.pooling {
                Pooling::Mean => tape.gather_mean(*table, lists.clone())?,
                Pooling::Sum => tape.gather_sum(*table, lists.clone())?,
            },
        };
        parts.push(v);
    }
    let mut x = tape.concat(&parts)?;
    let last = nodes.layers.len() - 1;
    for (i, (w, b)) in nodes.layers.iter().enumerate() {
        let z = tape.matmul(x, *w)?;
        let z = tape.add_row(z, *b)?;
        x = if i < last { tape.relu(z)? } else { z };
    }
    Ok(x)
}

/// Mean binary cross-entropy of `sigmoid(logits)` against `labels`.
pub fn log_loss_node(tape: &mut Tape, logits: Var, labels: &[f64]) -> Result<Var> {
    let y = tape.constant(Tensor::column(labels.to_vec()));
    let not_y = tape.constant(Tensor::column(labels.iter().map(|v| 1.0 - v).collect()));
    let p = tape.sigmoid(logits)?;
    let p = tape.clamp(p, CLIP, 1.0 - CLIP)?;
    let log_p = tape.log(p)?;
    let q = tape.one_minus(p)?;
    let log_q = tape.log(q)?;
    let a = tape.mul(y, log_p)?;
    let b = tape.mul(not_y, log_q)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s)?;
    tape.scale(m, -1.0)
}

/// Loss of the plan's `batch_index`-th batch with parameters `flat`.
pub fn batch_loss(
    tape: &mut Tape,
    layout: &ModelLayout,
    plan: &SubsetPlan,
    flat: Var,
    batch_index: usize,
) -> Result<Var> {
    let nodes = param_nodes(tape, layout, plan, flat)?;
    let batch = &plan.batches()[batch_index];
    let z = logits(tape, layout, &nodes, batch)?;
    log_loss_node(tape, z, &batch.labels)
}

/// Mean log loss over plain score/label arrays, with the same clipping.
pub fn log_loss(scores: &[f64], labels: &[f64]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(CLIP, 1.0 - CLIP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    total / scores.len() as f64
}

const PREDICT_CHUNK: usize = 2048;

/// Click probabilities for `samples` under parameters `theta`.
pub fn predict(layout: &ModelLayout, theta: &[f64], samples: &[&Sample]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(PREDICT_CHUNK) {
        let batch = Batch::from_samples(layout, chunk)?;
        let plan = SubsetPlan::touched(layout, std::slice::from_ref(&batch));
        let mut tape = Tape::new();
        let flat = tape.constant(plan.gather(theta));
        let nodes = param_nodes(&mut tape, layout, &plan, flat)?;
        let z = logits(&mut tape, layout, &nodes, &plan.batches()[0])?;
        let p = tape.sigmoid(z)?;
        out.extend_from_slice(tape.value(p).data());
    }
    Ok(out)
}
