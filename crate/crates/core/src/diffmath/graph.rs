//! Tape-style reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and `backward` is a single reverse sweep. Trainable
//! leaves are registered by name; gradients come back keyed by that name.

use indexmap::IndexMap;

use super::tensor::{self, Tensor, LOG_CLAMP};
use crate::error::{shape_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Parameter gradients keyed by parameter name.
pub type Gradients = IndexMap<String, Tensor>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxTemp { x: Var, tau: f64, axis: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, index: Vec<usize> },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    WeightedNll { probs: Var, targets: Vec<usize>, weights: Vec<f64> },
    Entropy(Var),
    BeliefStep { q: Var, p: Var, t: Var },
    Conv2d { x: Var, w: Var, b: Var, stride: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A differentiation graph. Single-threaded; build one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &str) -> Result<Var> {
        value.check_finite(name)?;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// A trainable leaf. Registering the same name twice accumulates both
    /// uses into one gradient entry.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Result<Var> {
        let v = self.push(value.clone(), Op::Leaf, true, name)?;
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg, "mul")
    }

    /// Adds a bias vector to every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let out = tensor::add_bias(self.value(a), self.value(bias))?;
        let rg = self.rg(a) || self.rg(bias);
        self.push(out, Op::AddBias(a, bias), rg, "add_bias")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg, "scale")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg, "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg, "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg, "relu")
    }

    pub fn softmax_temp(&mut self, x: Var, tau: f64, axis: usize) -> Result<Var> {
        let out = tensor::softmax_temp(self.value(x), tau, axis)?;
        let rg = self.rg(x);
        self.push(out, Op::SoftmaxTemp { x, tau, axis }, rg, "softmax_temp")
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var, tau: f64) -> Result<Var> {
        let axis = self.value(x).shape().len() - 1;
        self.softmax_temp(x, tau, axis)
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_cols", "no inputs");
        };
        let rows = self.value(first).shape()[0];
        let mut cols = 0;
        for &p in parts {
            match self.value(p).shape() {
                [r, c] if *r == rows => cols += c,
                s => return shape_err("concat_cols", format!("part {s:?} vs {rows} rows")),
            }
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let out = Tensor::new(vec![rows, cols], data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), rg, "concat_cols")
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_rows", "no inputs");
        };
        let cols = self.value(first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.cols() != cols {
                return shape_err("concat_rows", format!("part {:?} vs {cols} cols", t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let out = Tensor::new(vec![rows, cols], data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), rg, "concat_rows")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = match t.shape() {
            [r, c] => (*r, *c),
            s => return shape_err("slice_cols", format!("expected matrix, got {s:?}")),
        };
        if len == 0 || start + len > cols {
            return shape_err("slice_cols", format!("[{start}, {}) of {cols}", start + len));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let rg = self.rg(x);
        let out = Tensor::new(vec![rows, len], data)?;
        self.push(out, Op::SliceCols { x, start }, rg, "slice_cols")
    }

    /// Selects rows of a matrix by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 || index.is_empty() || index.iter().any(|&i| i >= t.rows()) {
            return shape_err("gather_rows", format!("{} indices into {:?}", index.len(), t.shape()));
        }
        let mut data = Vec::with_capacity(index.len() * t.cols());
        for &i in index {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![index.len(), t.cols()], data)?;
        let rg = self.rg(x);
        self.push(
            out,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            rg,
            "gather_rows",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg, "reshape")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(x);
        self.push(out, Op::Mean(x), rg, "mean")
    }

    /// `Σ_i w_i · −ln(max(p[i, target_i], 1e-12))` over the rows of `probs`.
    pub fn weighted_nll(&mut self, probs: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let t = self.value(probs);
        if t.shape().len() != 2 || t.rows() != targets.len() || weights.len() != targets.len() {
            return shape_err(
                "weighted_nll",
                format!("{:?} with {} targets, {} weights", t.shape(), targets.len(), weights.len()),
            );
        }
        if let Some(&bad) = targets.iter().find(|&&k| k >= t.cols()) {
            return Err(Error::InvalidArgument(format!(
                "target class {bad} out of range for {} classes",
                t.cols()
            )));
        }
        let mut total = 0.0;
        for (i, (&k, &w)) in targets.iter().zip(weights).enumerate() {
            if w != 0.0 {
                total -= w * t.row(i)[k].max(LOG_CLAMP).ln();
            }
        }
        let rg = self.rg(probs);
        let op = Op::WeightedNll {
            probs,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
        };
        self.push(Tensor::scalar(total), op, rg, "weighted_nll")
    }

    /// Mean over rows of the Shannon entropy `−Σ p ln p` of each row.
    pub fn entropy(&mut self, probs: Var) -> Result<Var> {
        let t = self.value(probs);
        let h: f64 = t.data().iter().map(|&p| -p * p.max(LOG_CLAMP).ln()).sum();
        let out = Tensor::scalar(h / t.rows() as f64);
        let rg = self.rg(probs);
        self.push(out, Op::Entropy(probs), rg, "entropy")
    }

    /// Batched probabilistic Moore step, see [`tensor::belief_step`].
    pub fn belief_step(&mut self, q: Var, p: Var, t: Var) -> Result<Var> {
        let out = tensor::belief_step(self.value(q), self.value(p), self.value(t))?;
        let rg = self.rg(q) || self.rg(p) || self.rg(t);
        self.push(out, Op::BeliefStep { q, p, t }, rg, "belief_step")
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let out = tensor::conv2d(self.value(x), self.value(w), self.value(b), stride)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(out, Op::Conv2d { x, w, b, stride }, rg, "conv2d")
    }

    /// Reverse sweep from a scalar `loss`. Every parameter registered in this
    /// graph gets an entry; unreachable ones get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }

        let mut out = Gradients::new();
        for (name, v) in &self.params {
            let g = grads
                .get(v.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
            match out.get_mut(name) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    out.insert(name.clone(), g);
                }
            }
        }
        for (name, g) in &out {
            g.check_finite(&format!("gradient of {name}"))?;
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, tensor::matmul_nt(g, self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, tensor::matmul_tn(self.value(*a), g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(bv, "mul", |x, y| x * y)?);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(av, "mul", |x, y| x * y)?);
                }
            }
            Op::AddBias(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*bias) {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Tensor::new(shape, db)?);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| v * c)),
            Op::Tanh(a) => self.accumulate(grads, *a, g.zip_map(y, "tanh", |g, y| g * (1.0 - y * y))?),
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, g.zip_map(y, "sigmoid", |g, y| g * y * (1.0 - y))?)
            }
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?;
                self.accumulate(grads, *a, d)
            }
            Op::SoftmaxTemp { x, tau, axis } => {
                self.accumulate(grads, *x, tensor::softmax_temp_backward(y, g, *tau, *axis))
            }
            Op::ConcatCols(parts) => {
                let rows = y.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row(r)[offset..offset + c]);
                        }
                        self.accumulate(grads, p, Tensor::new(vec![rows, c], d)?);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    let n = t.len();
                    if self.rg(p) {
                        let d = g.data()[offset..offset + n].to_vec();
                        self.accumulate(grads, p, Tensor::new(vec![n / cols, cols], d)?);
                    }
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let xt = self.value(*x);
                let (rows, cols, len) = (xt.rows(), xt.cols(), y.cols());
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *x, Tensor::new(vec![rows, cols], d)?);
            }
            Op::GatherRows { x, index } => {
                let xt = self.value(*x);
                let cols = xt.cols();
                let mut d = vec![0.0; xt.len()];
                for (r, &i) in index.iter().enumerate() {
                    for (dv, gv) in d[i * cols..(i + 1) * cols].iter_mut().zip(g.row(r)) {
                        *dv += gv;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xt.shape().to_vec(), d)?);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().reshape(&shape)?);
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::filled(&shape, g.item()));
            }
            Op::Mean(x) => {
                let xt = self.value(*x);
                let v = g.item() / xt.len() as f64;
                self.accumulate(grads, *x, Tensor::filled(xt.shape(), v));
            }
            Op::WeightedNll {
                probs,
                targets,
                weights,
            } => {
                let pt = self.value(*probs);
                let cols = pt.cols();
                let mut d = vec![0.0; pt.len()];
                for (i, (&k, &w)) in targets.iter().zip(weights).enumerate() {
                    let p = pt.row(i)[k];
                    if p > LOG_CLAMP {
                        d[i * cols + k] = -g.item() * w / p;
                    }
                }
                self.accumulate(grads, *probs, Tensor::new(pt.shape().to_vec(), d)?);
            }
            Op::Entropy(probs) => {
                let pt = self.value(*probs);
                let scale = g.item() / pt.rows() as f64;
                let d = pt.map(|p| {
                    if p > LOG_CLAMP {
                        -scale * (p.ln() + 1.0)
                    } else {
                        -scale * LOG_CLAMP.ln()
                    }
                });
                self.accumulate(grads, *probs, d);
            }
            Op::BeliefStep { q, p, t } => {
                let (dq, dp, dt) =
                    tensor::belief_step_backward(self.value(*q), self.value(*p), self.value(*t), g);
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *p, dp);
                self.accumulate(grads, *t, dt);
            }
            Op::Conv2d { x, w, b, stride } => {
                let (dx, dw, db) =
                    tensor::conv2d_backward(self.value(*x), self.value(*w), *stride, g, self.rg(*x));
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, dw);
                self.accumulate(grads, *b, db);
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean cross-entropy of a sequence of probability rows against class
/// indices: `mean_t −ln(max(pred[t][target[t]], 1e-12))`.
pub fn cross_entropy_seq(g: &mut Graph, pred: Var, targets: &[usize]) -> Result<Var> {
    let rows = g.value(pred).rows();
    if rows != targets.len() {
        return shape_err(
            "cross_entropy_seq",
            format!("{rows} predictions vs {} targets", targets.len()),
        );
    }
    let w = vec![1.0 / rows as f64; rows];
    g.weighted_nll(pred, targets, &w)
}
