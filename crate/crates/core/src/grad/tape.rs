//! Recording tape with reverse-mode vector-Jacobian products.
//!
//! Values are computed eagerly when an operation is recorded. `backward`
//! walks the records in exact reverse order and accumulates into operand
//! gradients in ascending index order, so repeated runs are bitwise stable.

use std::rc::Rc;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row lists for mean-pooled gathers, stored as CSR offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct RowLists {
    offsets: Vec<usize>,
    rows: Vec<usize>,
}

impl RowLists {
    pub fn new() -> Self {
        RowLists {
            offsets: vec![0],
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, rows: &[usize]) {
        self.rows.extend_from_slice(rows);
        self.offsets.push(self.rows.len());
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.rows[self.offsets[i]..self.offsets[i + 1]]
    }
}

impl Default for RowLists {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Concat(Vec<Var>),
    Gather(Var, Rc<[usize]>),
    GatherPool(Var, Rc<RowLists>, bool),
    Reshape(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    GroupedMatVec(Var, Var, Rc<[usize]>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Single-owner record of primitive applications.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    recorded_ops: usize,
}

/// Gradients returned by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros when nothing flowed into it.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Registers a non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        if !matches!(op, Op::Leaf | Op::Constant) {
            self.recorded_ops += 1;
        }
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = self.eval(&op, |v| &self.nodes[v.0].value)?;
        Ok(self.push(op, value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }
    /// `[m, n] + [1, n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.record(Op::AddRow(a, bias))
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.record(Op::Scale(a, s))
    }
    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.record(Op::AddScalar(a, s))
    }
    /// `1 - a`, recorded as `(-a) + 1`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }
    /// Column-wise concatenation of rank-2 tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(Op::Concat(parts.to_vec()))
    }
    /// Row lookup: `out[r] = src[idx[r]]`.
    pub fn gather(&mut self, src: Var, idx: Rc<[usize]>) -> Result<Var> {
        self.record(Op::Gather(src, idx))
    }
    /// Multi-hot lookup pooled by mean; an empty list yields a zero row.
    pub fn gather_mean(&mut self, src: Var, lists: Rc<RowLists>) -> Result<Var> {
        self.record(Op::GatherPool(src, lists, true))
    }
    /// Multi-hot lookup pooled by sum.
    pub fn gather_sum(&mut self, src: Var, lists: Rc<RowLists>) -> Result<Var> {
        self.record(Op::GatherPool(src, lists, false))
    }
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[a.0].value.clone().reshape(shape)?;
        Ok(self.push(Op::Reshape(a), value))
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sigmoid(a))
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Tanh(a))
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Relu(a))
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Log(a))
    }
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.record(Op::Clamp(a, lo, hi))
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum(a))
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Mean(a))
    }
    /// Per-row matrix-vector product with a row-selected weight slab:
    /// `out[c] = w[groups[c]] . x[c]` for `w: [G, m, p]`, `x: [C, p]`.
    pub fn grouped_matvec(&mut self, w: Var, x: Var, groups: Rc<[usize]>) -> Result<Var> {
        self.record(Op::GroupedMatVec(w, x, groups))
    }

    fn eval<'a>(&'a self, op: &Op, val: impl Fn(Var) -> &'a Tensor) -> Result<Tensor> {
        let out = match op {
            Op::Leaf | Op::Constant => unreachable!("inputs are not evaluated"),
            Op::MatMul(a, b) => matmul(val(*a), val(*b))?,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                if x.shape() != y.shape() {
                    let name = match op {
                        Op::Add(..) => "add",
                        Op::Sub(..) => "sub",
                        _ => "mul",
                    };
                    return Err(shape_err(name, x, y));
                }
                let data = match op {
                    Op::Add(..) => x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect(),
                    Op::Sub(..) => x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect(),
                    _ => x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect(),
                };
                Tensor::new(x.shape().to_vec(), data)?
            }
            Op::AddRow(a, b) => {
                let (x, bias) = (val(*a), val(*b));
                let (m, n) = x.dims2("add_row")?;
                if bias.len() != n {
                    return Err(shape_err("add_row", x, bias));
                }
                let mut data = x.data().to_vec();
                for i in 0..m {
                    for (o, bv) in data[i * n..(i + 1) * n].iter_mut().zip(bias.data()) {
                        *o += bv;
                    }
                }
                Tensor::new(vec![m, n], data)?
            }
            Op::Scale(a, s) => val(*a).map(|v| v * s),
            Op::AddScalar(a, s) => val(*a).map(|v| v + s),
            Op::Concat(parts) => {
                if parts.is_empty() {
                    return Err(Error::Invalid("concat of zero tensors".into()));
                }
                let first = val(parts[0]);
                let (m, _) = first.dims2("concat")?;
                let mut widths = Vec::with_capacity(parts.len());
                for p in parts {
                    let t = val(*p);
                    let (r, c) = t.dims2("concat")?;
                    if r != m {
                        return Err(shape_err("concat", first, t));
                    }
                    widths.push(c);
                }
                let total: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(m * total);
                for i in 0..m {
                    for (p, &w) in parts.iter().zip(&widths) {
                        data.extend_from_slice(&val(*p).data()[i * w..(i + 1) * w]);
                    }
                }
                Tensor::new(vec![m, total], data)?
            }
            Op::Gather(src, idx) => {
                let s = val(*src);
                let (rows, w) = s.dims2("gather")?;
                let mut data = Vec::with_capacity(idx.len() * w);
                for &r in idx.iter() {
                    if r >= rows {
                        return Err(Error::IndexOutOfRange {
                            what: "gather".into(),
                            index: r,
                            size: rows,
                        });
                    }
                    data.extend_from_slice(&s.data()[r * w..(r + 1) * w]);
                }
                Tensor::new(vec![idx.len(), w], data)?
            }
            Op::GatherPool(src, lists, mean) => {
                let s = val(*src);
                let (rows, w) = s.dims2("gather_pool")?;
                let mut data = vec![0.0; lists.len() * w];
                for i in 0..lists.len() {
                    let list = lists.get(i);
                    if list.is_empty() {
                        continue;
                    }
                    let out = &mut data[i * w..(i + 1) * w];
                    for &r in list {
                        if r >= rows {
                            return Err(Error::IndexOutOfRange {
                                what: "gather_pool".into(),
                                index: r,
                                size: rows,
                            });
                        }
                        for (o, v) in out.iter_mut().zip(&s.data()[r * w..(r + 1) * w]) {
                            *o += v;
                        }
                    }
                    if *mean {
                        let inv = 1.0 / list.len() as f64;
                        out.iter_mut().for_each(|o| *o *= inv);
                    }
                }
                Tensor::new(vec![lists.len(), w], data)?
            }
            Op::Reshape(_) => unreachable!("reshape is recorded directly"),
            Op::Sigmoid(a) => val(*a).map(sigmoid),
            Op::Tanh(a) => val(*a).map(f64::tanh),
            Op::Relu(a) => val(*a).map(|v| if v > 0.0 { v } else { 0.0 }),
            Op::Log(a) => val(*a).map(f64::ln),
            Op::Clamp(a, lo, hi) => val(*a).map(|v| v.clamp(*lo, *hi)),
            Op::Sum(a) => Tensor::scalar(val(*a).data().iter().sum()),
            Op::Mean(a) => {
                let t = val(*a);
                if t.is_empty() {
                    return Err(Error::Invalid("mean of empty tensor".into()));
                }
                Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64)
            }
            Op::GroupedMatVec(w, x, groups) => {
                let (wt, xt) = (val(*w), val(*x));
                let (g, m, p) = match wt.shape() {
                    [g, m, p] => (*g, *m, *p),
                    _ => return Err(shape_err("grouped_matvec", wt, xt)),
                };
                let (c, p2) = xt.dims2("grouped_matvec")?;
                if p != p2 || groups.len() != c {
                    return Err(shape_err("grouped_matvec", wt, xt));
                }
                let mut data = vec![0.0; c * m];
                for (row, &grp) in groups.iter().enumerate() {
                    if grp >= g {
                        return Err(Error::IndexOutOfRange {
                            what: "grouped_matvec group".into(),
                            index: grp,
                            size: g,
                        });
                    }
                    let xr = &xt.data()[row * p..(row + 1) * p];
                    let slab = &wt.data()[grp * m * p..(grp + 1) * m * p];
                    for i in 0..m {
                        let wr = &slab[i * p..(i + 1) * p];
                        let mut acc = 0.0;
                        for (a, b) in wr.iter().zip(xr) {
                            acc += a * b;
                        }
                        data[row * m + i] = acc;
                    }
                }
                Tensor::new(vec![c, m], data)?
            }
        };
        Ok(out)
    }

    /// Recomputes every recorded value from the stored inputs.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf | Op::Constant => node.value.clone(),
                Op::Reshape(a) => values[a.0].clone().reshape(node.value.shape())?,
                op => {
                    let vals = &values;
                    self.eval(op, |v| &vals[v.0])?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse pass from `output` seeded with `seed`.
    pub fn backward(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        if self.recorded_ops == 0 {
            return Err(Error::BackwardBeforeForward);
        }
        let out_shape = self.nodes[output.0].value.shape();
        if seed.shape() != out_shape {
            return Err(Error::SeedShape {
                seed: seed.shape().to_vec(),
                output: out_shape.to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf | Op::Constant => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = matmul_nt(&g, val(*b))?;
                    let gb = matmul_tn(val(*a), &g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, val(*b), |gv, bv| gv * bv);
                    let gb = zip_map(&g, val(*a), |gv, av| gv * av);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, b) => {
                    let (m, n) = g.dims2("add_row")?;
                    let mut gb = vec![0.0; n];
                    for r in 0..m {
                        for (o, v) in gb.iter_mut().zip(&g.data()[r * n..(r + 1) * n]) {
                            *o += v;
                        }
                    }
                    let gb = Tensor::new(val(*b).shape().to_vec(), gb)?;
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|v| v * s)),
                Op::AddScalar(a, _) => accumulate(&mut grads, *a, g),
                Op::Concat(parts) => {
                    let (m, total) = g.dims2("concat")?;
                    let mut col = 0;
                    for p in parts {
                        let (_, w) = val(*p).dims2("concat")?;
                        let mut data = Vec::with_capacity(m * w);
                        for r in 0..m {
                            data.extend_from_slice(&g.data()[r * total + col..r * total + col + w]);
                        }
                        col += w;
                        accumulate(&mut grads, *p, Tensor::new(vec![m, w], data)?);
                    }
                }
                Op::Gather(src, idx) => {
                    let s = val(*src);
                    let (_, w) = s.dims2("gather")?;
                    let mut gs = Tensor::zeros(s.shape());
                    let buf = gs.data_mut();
                    for (r, &row) in idx.iter().enumerate() {
                        for (o, v) in buf[row * w..(row + 1) * w]
                            .iter_mut()
                            .zip(&g.data()[r * w..(r + 1) * w])
                        {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *src, gs);
                }
                Op::GatherPool(src, lists, mean) => {
                    let s = val(*src);
                    let (_, w) = s.dims2("gather_pool")?;
                    let mut gs = Tensor::zeros(s.shape());
                    let buf = gs.data_mut();
                    for r in 0..lists.len() {
                        let list = lists.get(r);
                        if list.is_empty() {
                            continue;
                        }
                        let inv = if *mean { 1.0 / list.len() as f64 } else { 1.0 };
                        let gr = &g.data()[r * w..(r + 1) * w];
                        for &row in list {
                            for (o, v) in buf[row * w..(row + 1) * w].iter_mut().zip(gr) {
                                *o += v * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, *src, gs);
                }
                Op::Reshape(a) => {
                    let ga = g.reshape(val(*a).shape())?;
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_map(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = zip_map(&g, &node.value, |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = zip_map(&g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let ga = zip_map(&g, val(*a), |gv, x| gv / x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = zip_map(
                        &g,
                        val(*a),
                        |gv, x| if x >= lo && x <= hi { gv } else { 0.0 },
                    );
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *a, Tensor::filled(val(*a).shape(), gv));
                }
                Op::Mean(a) => {
                    let t = val(*a);
                    let gv = g.data()[0] / t.len() as f64;
                    accumulate(&mut grads, *a, Tensor::filled(t.shape(), gv));
                }
                Op::GroupedMatVec(w, x, groups) => {
                    let (wt, xt) = (val(*w), val(*x));
                    let (m, p) = (wt.shape()[1], wt.shape()[2]);
                    let mut gw = Tensor::zeros(wt.shape());
                    let mut gx = Tensor::zeros(xt.shape());
                    {
                        let gwb = gw.data_mut();
                        let gxb = gx.data_mut();
                        for (row, &grp) in groups.iter().enumerate() {
                            let xr = &xt.data()[row * p..(row + 1) * p];
                            let gr = &g.data()[row * m..(row + 1) * m];
                            let slab = &wt.data()[grp * m * p..(grp + 1) * m * p];
                            let gslab = &mut gwb[grp * m * p..(grp + 1) * m * p];
                            let gxr = &mut gxb[row * p..(row + 1) * p];
                            for i in 0..m {
                                let gi = gr[i];
                                if gi == 0.0 {
                                    continue;
                                }
                                let wr = &slab[i * p..(i + 1) * p];
                                let gwr = &mut gslab[i * p..(i + 1) * p];
                                for j in 0..p {
                                    gwr[j] += gi * xr[j];
                                    gxr[j] += gi * wr[j];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map operands share a shape")
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
