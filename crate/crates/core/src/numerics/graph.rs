//! Recorded computation graph with reverse-mode gradients.
//!
//! Every operation appends a node holding its forward value. Nodes are stored
//! in execution order, so the node list is already a topological order and
//! `backward` is a single reverse sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Normalization direction for softmax-like ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Axis {
    /// Each row sums to one.
    #[default]
    Row,
    /// Each column sums to one.
    Col,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu {
        x: Var,
        active: Vec<bool>,
    },
    Softmax(Var, Axis),
    LogSoftmax(Var, Axis),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Tensor,
        inv_std: Vec<f64>,
    },
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    Max {
        x: Var,
        index: usize,
    },
    LogSumExp(Var),
    Diagonal(Var),
    MeanAll(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Relu { .. } => "relu",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::MeanRows(_) => "mean_pool",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::Max { .. } => "max",
            Op::LogSumExp(_) => "logsumexp",
            Op::Diagonal(_) => "diagonal",
            Op::MeanAll(_) => "mean_all",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::Softmax(x, _)
            | Op::LogSoftmax(x, _)
            | Op::MeanRows(x)
            | Op::LogSumExp(x)
            | Op::Diagonal(x)
            | Op::MeanAll(x) => vec![*x],
            Op::Relu { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.clone(),
            Op::SliceRows { x, .. }
            | Op::SliceCols { x, .. }
            | Op::NormalizeRows { x, .. }
            | Op::Max { x, .. } => vec![*x],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of tensor operations. Confined to one thread while it is built and
/// differentiated.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
    frozen_relu: Option<(Vec<Vec<bool>>, usize)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that accumulates a gradient during `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    /// Gradient accumulated by the last `backward`, if the node took part in it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).expect_matrix(op)
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.value(a).shape().to_vec(),
            right: self.value(b).shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.derived(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.dims(x, "transpose")?;
        let out = self.value(x).transpose();
        Ok(self.derived(out, Op::Transpose(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("add", a, b));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.derived(out, Op::Add(a, b)))
    }

    /// Adds the `1×D` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, d) = self.dims(x, "add_row")?;
        let (br, bd) = self.dims(bias, "add_row")?;
        if br != 1 || bd != d {
            return Err(self.shape_err("add_row", x, bias));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(d) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.derived(out, Op::AddRow(x, bias)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.derived(out, Op::Scale(x, factor))
    }

    /// `max(0, x)`; the subgradient at zero is zero.
    /// `max(0, x)`; the subgradient at 0 is 0. With frozen patterns (see
    /// [`Graph::freeze_relu`]) the k-th call instead passes exactly the entries
    /// marked active in the k-th pattern.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.index()].value;
        let active: Vec<bool> = match &mut self.frozen_relu {
            Some((patterns, next)) => {
                let p = patterns.get(*next).ok_or_else(|| {
                    Error::InvalidArgument(format!("no frozen pattern for relu call {next}"))
                })?;
                if p.len() != xv.len() {
                    return Err(Error::InvalidArgument(format!(
                        "frozen pattern {next} has {} entries, input has {}",
                        p.len(),
                        xv.len()
                    )));
                }
                *next += 1;
                p.clone()
            }
            None => xv.data().iter().map(|&v| v > 0.0).collect(),
        };
        let data = xv
            .data()
            .iter()
            .zip(&active)
            .map(|(&v, &a)| if a { v } else { 0.0 })
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.derived(out, Op::Relu { x, active }))
    }

    /// Activation pattern of every relu recorded so far, in call order.
    pub fn relu_patterns(&self) -> Vec<Vec<bool>> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Relu { active, .. } => Some(active.clone()),
                _ => None,
            })
            .collect()
    }

    /// Makes subsequent relu calls follow `patterns` instead of the sign of
    /// their input. The recorded function is then smooth in every input, and
    /// equals the unfrozen one wherever the patterns agree.
    pub fn freeze_relu(&mut self, patterns: Vec<Vec<bool>>) {
        self.frozen_relu = Some((patterns, 0));
    }

    pub fn softmax(&mut self, x: Var, axis: Axis) -> Result<Var> {
        self.dims(x, "softmax")?;
        let out = softmax_forward(self.value(x), axis, false);
        Ok(self.derived(out, Op::Softmax(x, axis)))
    }

    pub fn log_softmax(&mut self, x: Var, axis: Axis) -> Result<Var> {
        self.dims(x, "log_softmax")?;
        let out = softmax_forward(self.value(x), axis, true);
        Ok(self.derived(out, Op::LogSoftmax(x, axis)))
    }

    /// Row-wise `((x - mean) / sqrt(var + eps)) * gamma + beta` with the
    /// biased (denominator D) variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.dims(x, "layer_norm")?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [1, d] {
                return Err(self.shape_err("layer_norm", x, p));
            }
        }
        if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidArgument(format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normed = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..d {
                let h = (row[c] - mean) * is;
                normed[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let out = Tensor::matrix(n, d, out)?;
        let normed = Tensor::matrix(n, d, normed)?;
        Ok(self.derived(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
        ))
    }

    /// Column means of an `n×D` matrix, as a `1×D` row.
    pub fn mean_pool(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims(x, "mean_pool")?;
        let xs = self.value(x).data();
        let mut out = vec![0.0; d];
        for row in xs.chunks(d) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        let out = Tensor::row_vector(out)?;
        Ok(self.derived(out, Op::MeanRows(x)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or(Error::EmptyAxis { op: "concat_rows" })?;
        let (_, d) = self.dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, pd) = self.dims(p, "concat_rows")?;
            if pd != d {
                return Err(self.shape_err("concat_rows", first, p));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::matrix(rows, d, data)?;
        Ok(self.derived(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or(Error::EmptyAxis { op: "concat_cols" })?;
        let (n, _) = self.dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, w) = self.dims(p, "concat_cols")?;
            if pn != n {
                return Err(self.shape_err("concat_cols", first, p));
            }
            widths.push(w);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(n, total, data)?;
        Ok(self.derived(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.dims(x, "slice_rows")?;
        if len == 0 || start + len > n {
            return Err(Error::OutOfRange {
                op: "slice_rows",
                index: start + len,
                len: n,
            });
        }
        let data = self.value(x).data()[start * d..(start + len) * d].to_vec();
        let out = Tensor::matrix(len, d, data)?;
        Ok(self.derived(out, Op::SliceRows { x, start }))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.dims(x, "slice_cols")?;
        if len == 0 || start + len > d {
            return Err(Error::OutOfRange {
                op: "slice_cols",
                index: start + len,
                len: d,
            });
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let out = Tensor::matrix(n, len, data)?;
        Ok(self.derived(out, Op::SliceCols { x, start }))
    }

    /// Scales each row to unit Euclidean norm. Zero rows are an error.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims(x, "normalize_rows")?;
        let src = self.value(x);
        let mut norms = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * d);
        for r in 0..n {
            let row = src.row(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(Error::ZeroNormRow {
                    op: "normalize_rows",
                    row: r,
                });
            }
            norms.push(norm);
            data.extend(row.iter().map(|v| v / norm));
        }
        let out = Tensor::matrix(n, d, data)?;
        Ok(self.derived(out, Op::NormalizeRows { x, norms }))
    }

    /// Largest entry as a `1×1` scalar. Ties resolve to the lowest flat index,
    /// which is also where the gradient goes.
    pub fn max(&mut self, x: Var) -> Var {
        let data = self.value(x).data();
        let mut index = 0;
        for (i, &v) in data.iter().enumerate() {
            if v > data[index] {
                index = i;
            }
        }
        let out = Tensor::scalar(data[index]);
        self.derived(out, Op::Max { x, index })
    }

    /// `log(sum(exp(x)))` over all entries, max-stabilized.
    pub fn logsumexp(&mut self, x: Var) -> Var {
        let data = self.value(x).data();
        let m = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = data.iter().map(|v| (v - m).exp()).sum();
        let out = Tensor::scalar(m + s.ln());
        self.derived(out, Op::LogSumExp(x))
    }

    /// Diagonal of a square matrix as a `1×n` row.
    pub fn diagonal(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.dims(x, "diagonal")?;
        if n != m {
            return Err(self.shape_err("diagonal", x, x));
        }
        let src = self.value(x);
        let out = Tensor::row_vector((0..n).map(|i| src.get(i, i)).collect())?;
        Ok(self.derived(out, Op::Diagonal(x)))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let out = Tensor::scalar(src.data().iter().sum::<f64>() / src.len() as f64);
        self.derived(out, Op::MeanAll(x))
    }

    /// Reverse sweep from a scalar `loss`. Running it twice without
    /// `zero_grad` is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let seed = Tensor::filled(lv.rows(), lv.cols(), 1.0);
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(seed);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            for (input, contribution) in self.local_grads(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut self.grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let grads = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => vec![
                (*a, g.matmul(&val(*b).transpose())?),
                (*b, val(*a).transpose().matmul(g)?),
            ],
            Op::Transpose(x) => vec![(*x, g.transpose())],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRow(x, bias) => {
                let d = g.cols();
                let mut db = vec![0.0; d];
                for row in g.data().chunks(d) {
                    for (o, v) in db.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                vec![(*x, g.clone()), (*bias, Tensor::row_vector(db)?)]
            }
            Op::Scale(x, factor) => vec![(*x, g.map(|v| v * factor))],
            Op::Relu { x, active } => {
                let mut dx = g.clone();
                for (d, &a) in dx.data_mut().iter_mut().zip(active) {
                    if !a {
                        *d = 0.0;
                    }
                }
                vec![(*x, dx)]
            }
            Op::Softmax(x, axis) => {
                let mut dx = g.clone();
                for_each_lane(out.rows(), out.cols(), *axis, |lane| {
                    let dot: f64 = lane.iter().map(|&k| g.data()[k] * out.data()[k]).sum();
                    for &k in lane {
                        dx.data_mut()[k] = out.data()[k] * (g.data()[k] - dot);
                    }
                });
                vec![(*x, dx)]
            }
            Op::LogSoftmax(x, axis) => {
                let mut dx = g.clone();
                for_each_lane(out.rows(), out.cols(), *axis, |lane| {
                    let total: f64 = lane.iter().map(|&k| g.data()[k]).sum();
                    for &k in lane {
                        dx.data_mut()[k] = g.data()[k] - out.data()[k].exp() * total;
                    }
                });
                vec![(*x, dx)]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            } => {
                let (n, d) = (out.rows(), out.cols());
                let gam = val(*gamma).data();
                let mut dx = vec![0.0; n * d];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dh = vec![0.0; d];
                for r in 0..n {
                    let gr = g.row(r);
                    let hr = normed.row(r);
                    for c in 0..d {
                        dh[c] = gr[c] * gam[c];
                        dgamma[c] += gr[c] * hr[c];
                        dbeta[c] += gr[c];
                    }
                    let mean_dh = dh.iter().sum::<f64>() / d as f64;
                    let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for c in 0..d {
                        dx[r * d + c] = inv_std[r] * (dh[c] - mean_dh - hr[c] * mean_dh_h);
                    }
                }
                vec![
                    (*x, Tensor::matrix(n, d, dx)?),
                    (*gamma, Tensor::row_vector(dgamma)?),
                    (*beta, Tensor::row_vector(dbeta)?),
                ]
            }
            Op::MeanRows(x) => {
                let (n, d) = (val(*x).rows(), val(*x).cols());
                let row: Vec<f64> = g.data().iter().map(|v| v / n as f64).collect();
                let data = (0..n).flat_map(|_| row.iter().copied()).collect();
                vec![(*x, Tensor::matrix(n, d, data)?)]
            }
            Op::ConcatRows(parts) => {
                let d = g.cols();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let r = val(p).rows();
                    let data = g.data()[offset * d..(offset + r) * d].to_vec();
                    res.push((p, Tensor::matrix(r, d, data)?));
                    offset += r;
                }
                res
            }
            Op::ConcatCols(parts) => {
                let n = g.rows();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let w = val(p).cols();
                    let mut data = Vec::with_capacity(n * w);
                    for r in 0..n {
                        data.extend_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    res.push((p, Tensor::matrix(n, w, data)?));
                    offset += w;
                }
                res
            }
            Op::SliceRows { x, start } => {
                let src = val(*x);
                let d = src.cols();
                let mut dx = Tensor::zeros(src.rows(), d);
                dx.data_mut()[start * d..start * d + g.len()].copy_from_slice(g.data());
                vec![(*x, dx)]
            }
            Op::SliceCols { x, start } => {
                let src = val(*x);
                let (n, d, w) = (src.rows(), src.cols(), g.cols());
                let mut dx = Tensor::zeros(n, d);
                for r in 0..n {
                    dx.data_mut()[r * d + start..r * d + start + w].copy_from_slice(g.row(r));
                }
                vec![(*x, dx)]
            }
            Op::NormalizeRows { x, norms } => {
                let (n, d) = (out.rows(), out.cols());
                let mut dx = vec![0.0; n * d];
                for r in 0..n {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..d {
                        dx[r * d + c] = (gr[c] - y[c] * dot) / norms[r];
                    }
                }
                vec![(*x, Tensor::matrix(n, d, dx)?)]
            }
            Op::Max { x, index } => {
                let src = val(*x);
                let mut dx = Tensor::zeros(src.rows(), src.cols());
                dx.data_mut()[*index] = g.item();
                vec![(*x, dx)]
            }
            Op::LogSumExp(x) => {
                let lse = out.item();
                let gi = g.item();
                vec![(*x, val(*x).map(|v| (v - lse).exp() * gi))]
            }
            Op::Diagonal(x) => {
                let n = val(*x).rows();
                let mut dx = Tensor::zeros(n, n);
                for i in 0..n {
                    dx.data_mut()[i * n + i] = g.data()[i];
                }
                vec![(*x, dx)]
            }
            Op::MeanAll(x) => {
                let src = val(*x);
                let v = g.item() / src.len() as f64;
                vec![(*x, Tensor::filled(src.rows(), src.cols(), v))]
            }
        };
        Ok(grads)
    }
}

/// Calls `f` with the flat indices of each row (or column) of an `n×m` matrix.
fn for_each_lane(n: usize, m: usize, axis: Axis, mut f: impl FnMut(&[usize])) {
    let mut lane = Vec::with_capacity(n.max(m));
    match axis {
        Axis::Row => {
            for r in 0..n {
                lane.clear();
                lane.extend(r * m..(r + 1) * m);
                f(&lane);
            }
        }
        Axis::Col => {
            for c in 0..m {
                lane.clear();
                lane.extend((0..n).map(|r| r * m + c));
                f(&lane);
            }
        }
    }
}

fn softmax_forward(x: &Tensor, axis: Axis, log: bool) -> Tensor {
    let mut out = x.clone();
    for_each_lane(x.rows(), x.cols(), axis, |lane| {
        let max = lane
            .iter()
            .map(|&k| x.data()[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = lane.iter().map(|&k| (x.data()[k] - max).exp()).sum();
        let log_sum = sum.ln();
        for &k in lane {
            let shifted = x.data()[k] - max;
            out.data_mut()[k] = if log {
                shifted - log_sum
            } else {
                shifted.exp() / sum
            };
        }
    });
    out
}
