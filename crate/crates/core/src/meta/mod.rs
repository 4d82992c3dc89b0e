//! Grouped GRU meta generator and the linear-combination baseline.
//!
//! Every base-model coordinate is driven by the GRU of its group. Dense-layer
//! coordinates each own a group; an embedding dimension forms one group shared
//! by all rows of that table. Hidden state is kept per coordinate, since each
//! coordinate sees its own input sequence even when it shares weights.

mod checkpoint;
mod groups;
mod linear;
mod tape;

use rand::Rng;

pub use checkpoint::{decode_meta, encode_meta, load_meta, save_meta, MetaCheckpoint};
pub use groups::{GroupKind, GroupMap};
pub use linear::{linear_combine, linear_combine_on_tape, LinearMetaParams};
pub use tape::{meta_nodes, rollout_on_tape, MetaNodes, TapeRollout};

use crate::error::{Error, Result};
use crate::grad::sigmoid_scalar;
use crate::rng::{purpose, rng_for};

pub const META_INIT_RANGE: f64 = 0.1;

/// Weights of a single group's GRU and linear readout.
///
/// Gate matrices are `hidden x (hidden + 1)` row-major; the last column
/// multiplies the scalar input.
#[derive(Clone, Debug, PartialEq)]
pub struct GruGroupParams {
    pub hidden: usize,
    pub w_r: Vec<f64>,
    pub w_z: Vec<f64>,
    pub w_h: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl GruGroupParams {
    pub fn zeros(hidden: usize) -> Self {
        let gate = hidden * (hidden + 1);
        GruGroupParams {
            hidden,
            w_r: vec![0.0; gate],
            w_z: vec![0.0; gate],
            w_h: vec![0.0; gate],
            w_out: vec![0.0; hidden],
            b_out: 0.0,
        }
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in w.iter().zip(x) {
        acc += a * b;
    }
    acc
}

/// One GRU transition with the gate arithmetic written out in the same order
/// as the batched paths, so all three agree bitwise.
fn step_into(
    hidden: usize,
    w_r: &[f64],
    w_z: &[f64],
    w_h: &[f64],
    h: &mut [f64],
    theta: f64,
    scratch: &mut [f64],
) {
    let p = hidden + 1;
    let (x, rest) = scratch.split_at_mut(p);
    let (z, rest) = rest.split_at_mut(hidden);
    let x2 = &mut rest[..p];
    x[..hidden].copy_from_slice(h);
    x[hidden] = theta;
    for i in 0..hidden {
        let r = sigmoid_scalar(dot(&w_r[i * p..(i + 1) * p], x));
        z[i] = sigmoid_scalar(dot(&w_z[i * p..(i + 1) * p], x));
        x2[i] = r * h[i];
    }
    x2[hidden] = theta;
    for i in 0..hidden {
        let cand = dot(&w_h[i * p..(i + 1) * p], x2).tanh();
        h[i] = (1.0 - z[i]) * h[i] + z[i] * cand;
    }
}

const fn scratch_len(hidden: usize) -> usize {
    3 * hidden + 2
}

pub fn gru_step(g: &GruGroupParams, h_prev: &[f64], theta: f64) -> Result<Vec<f64>> {
    if h_prev.len() != g.hidden {
        return Err(Error::Shape {
            op: "gru_step",
            lhs: vec![g.hidden],
            rhs: vec![h_prev.len()],
        });
    }
    let mut h = h_prev.to_vec();
    let mut scratch = vec![0.0; scratch_len(g.hidden)];
    step_into(
        g.hidden,
        &g.w_r,
        &g.w_z,
        &g.w_h,
        &mut h,
        theta,
        &mut scratch,
    );
    Ok(h)
}

/// `W . h + b`.
pub fn readout(g: &GruGroupParams, h: &[f64]) -> Result<f64> {
    if h.len() != g.hidden {
        return Err(Error::Shape {
            op: "readout",
            lhs: vec![g.hidden],
            rhs: vec![h.len()],
        });
    }
    Ok(dot(&g.w_out, h) + g.b_out)
}

/// All groups' GRU weights stacked into one flat vector `omega`:
/// `w_r [G, d, d+1]`, `w_z`, `w_h`, `w_out [G, d]`, `b_out [G]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaGeneratorParams {
    pub hidden: usize,
    pub k: usize,
    /// Adds the step input to the readout so an untrained generator passes
    /// its input through.
    pub residual: bool,
    n_groups: usize,
    omega: Vec<f64>,
}

impl MetaGeneratorParams {
    /// Gates and readout weights `uniform(-0.1, 0.1)`, readout bias zero.
    pub fn init(
        map: &GroupMap,
        hidden: usize,
        k: usize,
        residual: bool,
        seed: u64,
    ) -> Result<Self> {
        if hidden == 0 || k == 0 {
            return Err(Error::Config(
                "meta hidden size and window length must be positive".into(),
            ));
        }
        let g = map.len();
        let mut rng = rng_for(seed, &[purpose::META_INIT]);
        let random = g * (3 * hidden * (hidden + 1) + hidden);
        let mut omega: Vec<f64> = (0..random)
            .map(|_| rng.gen_range(-META_INIT_RANGE..META_INIT_RANGE))
            .collect();
        omega.extend(std::iter::repeat_n(0.0, g));
        Ok(MetaGeneratorParams {
            hidden,
            k,
            residual,
            n_groups: g,
            omega,
        })
    }

    pub fn from_parts(
        hidden: usize,
        k: usize,
        residual: bool,
        n_groups: usize,
        omega: Vec<f64>,
    ) -> Result<Self> {
        let want = Self::param_count(n_groups, hidden);
        if omega.len() != want {
            return Err(Error::Invalid(format!(
                "meta parameter vector has {} entries, expected {want}",
                omega.len()
            )));
        }
        Ok(MetaGeneratorParams {
            hidden,
            k,
            residual,
            n_groups,
            omega,
        })
    }

    pub fn param_count(n_groups: usize, hidden: usize) -> usize {
        n_groups * (3 * hidden * (hidden + 1) + hidden + 1)
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn omega_mut(&mut self) -> &mut [f64] {
        &mut self.omega
    }

    fn gate_len(&self) -> usize {
        self.n_groups * self.hidden * (self.hidden + 1)
    }

    /// The five stacked sections in storage order.
    pub fn sections(&self) -> [&[f64]; 5] {
        let gl = self.gate_len();
        let (w_r, rest) = self.omega.split_at(gl);
        let (w_z, rest) = rest.split_at(gl);
        let (w_h, rest) = rest.split_at(gl);
        let (w_out, b_out) = rest.split_at(self.n_groups * self.hidden);
        [w_r, w_z, w_h, w_out, b_out]
    }

    pub fn group(&self, g: usize) -> GruGroupParams {
        let d = self.hidden;
        let gate = d * (d + 1);
        let [w_r, w_z, w_h, w_out, b_out] = self.sections();
        GruGroupParams {
            hidden: d,
            w_r: w_r[g * gate..(g + 1) * gate].to_vec(),
            w_z: w_z[g * gate..(g + 1) * gate].to_vec(),
            w_h: w_h[g * gate..(g + 1) * gate].to_vec(),
            w_out: w_out[g * d..(g + 1) * d].to_vec(),
            b_out: b_out[g],
        }
    }

    pub fn set_group(&mut self, g: usize, params: &GruGroupParams) -> Result<()> {
        let d = self.hidden;
        if params.hidden != d || g >= self.n_groups {
            return Err(Error::Invalid(format!(
                "group {g} does not fit this generator"
            )));
        }
        let gate = d * (d + 1);
        let gl = self.gate_len();
        let out_base = 3 * gl;
        let b_base = out_base + self.n_groups * d;
        self.omega[g * gate..(g + 1) * gate].copy_from_slice(&params.w_r);
        self.omega[gl + g * gate..gl + (g + 1) * gate].copy_from_slice(&params.w_z);
        self.omega[2 * gl + g * gate..2 * gl + (g + 1) * gate].copy_from_slice(&params.w_h);
        self.omega[out_base + g * d..out_base + (g + 1) * d].copy_from_slice(&params.w_out);
        self.omega[b_base + g] = params.b_out;
        Ok(())
    }

    /// Advances every coordinate's hidden state by one step in place.
    pub fn step_all(&self, map: &GroupMap, h: &mut [f64], theta: &[f64]) -> Result<()> {
        self.check_coords(map, h, theta)?;
        let d = self.hidden;
        let gate = d * (d + 1);
        let [w_r, w_z, w_h, _, _] = self.sections();
        let mut scratch = vec![0.0; scratch_len(d)];
        for (c, &g) in map.coord_groups().iter().enumerate() {
            let g = g as usize;
            let s = g * gate..(g + 1) * gate;
            step_into(
                d,
                &w_r[s.clone()],
                &w_z[s.clone()],
                &w_h[s],
                &mut h[c * d..(c + 1) * d],
                theta[c],
                &mut scratch,
            );
        }
        Ok(())
    }

    /// Readout for every coordinate; `theta` is the step input used by the
    /// residual option.
    pub fn readout_all(&self, map: &GroupMap, h: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.check_coords(map, h, theta)?;
        let d = self.hidden;
        let [_, _, _, w_out, b_out] = self.sections();
        Ok(map
            .coord_groups()
            .iter()
            .enumerate()
            .map(|(c, &g)| {
                let g = g as usize;
                let mut v = dot(&w_out[g * d..(g + 1) * d], &h[c * d..(c + 1) * d]) + b_out[g];
                if self.residual {
                    v += theta[c];
                }
                v
            })
            .collect())
    }

    fn check_coords(&self, map: &GroupMap, h: &[f64], theta: &[f64]) -> Result<()> {
        if map.len() != self.n_groups {
            return Err(Error::Invalid(format!(
                "generator has {} groups, map has {}",
                self.n_groups,
                map.len()
            )));
        }
        let n = map.n_coords();
        if theta.len() != n || h.len() != n * self.hidden {
            return Err(Error::Shape {
                op: "meta step",
                lhs: vec![n, self.hidden],
                rhs: vec![theta.len(), h.len()],
            });
        }
        Ok(())
    }
}

/// Hidden state of every coordinate, `n x hidden` row-major, tagged with the
/// last period it has consumed.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenStateStore {
    pub hidden: usize,
    pub tag: i64,
    pub h: Vec<f64>,
}

impl HiddenStateStore {
    pub fn zeros(n_coords: usize, hidden: usize, tag: i64) -> Self {
        HiddenStateStore {
            hidden,
            tag,
            h: vec![0.0; n_coords * hidden],
        }
    }

    pub fn n_coords(&self) -> usize {
        self.h.len() / self.hidden.max(1)
    }

    /// Consumes `theta` as the model of period `tag + 1`.
    pub fn advance(
        &mut self,
        meta: &MetaGeneratorParams,
        map: &GroupMap,
        theta: &[f64],
    ) -> Result<()> {
        if self.hidden != meta.hidden {
            return Err(Error::Invalid(
                "hidden store size does not match the generator".into(),
            ));
        }
        meta.step_all(map, &mut self.h, theta)?;
        self.tag += 1;
        Ok(())
    }
}

/// Outputs and hidden states at every step of a rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub outputs: Vec<Vec<f64>>,
    pub hidden: Vec<HiddenStateStore>,
}

/// Runs the window through the generator starting from `h_init`, producing
/// one serving parameter vector per step.
pub fn generate(
    meta: &MetaGeneratorParams,
    map: &GroupMap,
    window: &[&[f64]],
    h_init: &HiddenStateStore,
) -> Result<Generation> {
    if window.len() != meta.k {
        return Err(Error::Invalid(format!(
            "window holds {} models, generator expects {}",
            window.len(),
            meta.k
        )));
    }
    rollout(meta, map, window, h_init)
}

/// [`generate`] without the window-length check, for full-history rollouts.
pub fn rollout(
    meta: &MetaGeneratorParams,
    map: &GroupMap,
    window: &[&[f64]],
    h_init: &HiddenStateStore,
) -> Result<Generation> {
    if window.is_empty() {
        return Err(Error::Invalid("empty model window".into()));
    }
    let mut store = h_init.clone();
    let mut outputs = Vec::with_capacity(window.len());
    let mut hidden = Vec::with_capacity(window.len());
    for theta in window {
        store.advance(meta, map, theta)?;
        outputs.push(meta.readout_all(map, &store.h, theta)?);
        hidden.push(store.clone());
    }
    Ok(Generation { outputs, hidden })
}

/// Final-step output only, without retaining intermediate states.
pub fn serve(
    meta: &MetaGeneratorParams,
    map: &GroupMap,
    window: &[&[f64]],
    h_init: &HiddenStateStore,
) -> Result<Vec<f64>> {
    let last = window
        .last()
        .ok_or_else(|| Error::Invalid("empty model window".into()))?;
    let mut store = h_init.clone();
    for theta in window {
        store.advance(meta, map, theta)?;
    }
    meta.readout_all(map, &store.h, last)
}
