use std::rc::Rc;

use super::MetaGeneratorParams;
use crate::error::Result;
use crate::grad::{Tape, Tensor, Var};

/// Leaves holding the generator weights on a tape.
#[derive(Clone, Copy, Debug)]
pub struct MetaNodes {
    pub w_r: Var,
    pub w_z: Var,
    pub w_h: Var,
    pub w_out: Var,
    pub b_out: Var,
}

impl MetaNodes {
    pub fn all(&self) -> [Var; 5] {
        [self.w_r, self.w_z, self.w_h, self.w_out, self.b_out]
    }
}

pub fn meta_nodes(tape: &mut Tape, meta: &MetaGeneratorParams) -> Result<MetaNodes> {
    let (g, d) = (meta.n_groups(), meta.hidden);
    let [w_r, w_z, w_h, w_out, b_out] = meta.sections();
    Ok(MetaNodes {
        w_r: tape.leaf(Tensor::new(vec![g, d, d + 1], w_r.to_vec())?),
        w_z: tape.leaf(Tensor::new(vec![g, d, d + 1], w_z.to_vec())?),
        w_h: tape.leaf(Tensor::new(vec![g, d, d + 1], w_h.to_vec())?),
        w_out: tape.leaf(Tensor::new(vec![g, 1, d], w_out.to_vec())?),
        b_out: tape.leaf(Tensor::new(vec![g, 1], b_out.to_vec())?),
    })
}

#[derive(Clone, Debug)]
pub struct TapeRollout {
    /// `[C, 1]` generated values per step.
    pub outputs: Vec<Var>,
    /// `[C, hidden]` states per step.
    pub hidden: Vec<Var>,
}

/// Rolls a subset of coordinates through the generator on the tape.
///
/// `groups[c]` is the group of compact coordinate `c`, `inputs` are `[C, 1]`
/// per step and `h_init` is `[C, hidden]`.
pub fn rollout_on_tape(
    tape: &mut Tape,
    residual: bool,
    nodes: &MetaNodes,
    groups: Rc<[usize]>,
    inputs: &[Var],
    h_init: Var,
) -> Result<TapeRollout> {
    let bias = tape.gather(nodes.b_out, groups.clone())?;
    let mut h = h_init;
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut hidden = Vec::with_capacity(inputs.len());
    for &theta in inputs {
        let x = tape.concat(&[h, theta])?;
        let r_pre = tape.grouped_matvec(nodes.w_r, x, groups.clone())?;
        let r = tape.sigmoid(r_pre)?;
        let z_pre = tape.grouped_matvec(nodes.w_z, x, groups.clone())?;
        let z = tape.sigmoid(z_pre)?;
        let rh = tape.mul(r, h)?;
        let x2 = tape.concat(&[rh, theta])?;
        let c_pre = tape.grouped_matvec(nodes.w_h, x2, groups.clone())?;
        let cand = tape.tanh(c_pre)?;
        let keep = tape.one_minus(z)?;
        let kept = tape.mul(keep, h)?;
        let fresh = tape.mul(z, cand)?;
        h = tape.add(kept, fresh)?;
        let lin = tape.grouped_matvec(nodes.w_out, h, groups.clone())?;
        let mut out = tape.add(lin, bias)?;
        if residual {
            out = tape.add(out, theta)?;
        }
        outputs.push(out);
        hidden.push(h);
    }
    Ok(TapeRollout { outputs, hidden })
}
