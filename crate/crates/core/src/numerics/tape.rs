//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation applied to its variables. Calling
//! [`Tape::backward`] on a scalar walks the record in reverse and returns a
//! gradient for every variable that was created with [`Tape::param`] and
//! participated in the forward pass. Tapes are cheap and single-use: training
//! loops build a fresh one per step.
//!
//! Operations panic on shape mismatches (with both shapes in the message);
//! higher-level model functions validate shapes up front and return errors.

use std::fmt;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor, PROB_FLOOR};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Transpose(Var),
    Softmax(Var, f64),
    LogSoftmax(Var, f64),
    RowSum(Var),
    Mean(Var),
    Sum(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Var, Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, rows: Vec<usize>, probs: Tensor },
    NllProb { probs: Var, targets: Vec<usize>, rows: Vec<usize> },
    KlDiv { logits: Var, temperature: f64, target: Tensor, q: Tensor },
    BceWithLogits { logits: Var, targets: Tensor },
    SquaredError { pred: Var, target: Tensor },
    WeightedSoftmax { logits: Var, weights: Var, exp_shifted: Tensor },
    Mix { weights: Var, components: Tensor },
    RowMaxNormalize { input: Var, argmax: Vec<usize> },
    StraightThrough(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], keyed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or a zero tensor of `like`'s shape if `var` did not
    /// influence the loss.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) {
    if a.shape() != b.shape() {
        panic!("{}", Error::Shape { op, left: a.shape().to_vec(), right: b.shape().to_vec() });
    }
}

fn row_broadcast(op: &'static str, a: &Tensor, row: &Tensor) {
    if row.len() != a.cols() {
        panic!("{}", Error::Shape { op, left: a.shape().to_vec(), right: row.shape().to_vec() });
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

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf: gradients are reported for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Copy of `var`'s value as a constant, cutting the gradient path.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.value(var).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            panic!("{}", Error::Shape { op: "matmul", left: ta.shape().to_vec(), right: tb.shape().to_vec() });
        }
        let value = matmul(ta, tb);
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::MatMul(a, b), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape("add", self.value(a), self.value(b));
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape("sub", self.value(a), self.value(b));
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::Sub(a, b), g)
    }

    /// Adds the vector `row` to every row of `a` (bias broadcast).
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        row_broadcast("add_row", ta, tr);
        let mut value = ta.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(tr.data()) {
                *x += b;
            }
        }
        let g = self.grad_of(&[a, row]);
        self.push(value, Op::AddRow(a, row), g)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape("mul", self.value(a), self.value(b));
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::Mul(a, b), g)
    }

    /// Multiplies every row of `a` elementwise by the vector `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        row_broadcast("mul_row", ta, tr);
        let mut value = ta.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(tr.data()) {
                *x *= b;
            }
        }
        let g = self.grad_of(&[a, row]);
        self.push(value, Op::MulRow(a, row), g)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Scale(a, factor), g)
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let value = self.value(a).map(|x| x + offset);
        let g = self.grad_of(&[a]);
        self.push(value, Op::AddScalar(a), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let g = self.grad_of(&[a]);
        self.push(value, Op::Relu(a), g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Sigmoid(a), g)
    }

    /// Natural log with the input clamped below at [`PROB_FLOOR`].
    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(PROB_FLOOR).ln());
        let g = self.grad_of(&[a]);
        self.push(value, Op::Log(a), g)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let g = self.grad_of(&[a]);
        self.push(value, Op::Transpose(a), g)
    }

    /// Row-wise softmax of `a / temperature`.
    pub fn softmax(&mut self, a: Var, temperature: f64) -> Var {
        let value = self.value(a).softmax_rows(temperature);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Softmax(a, temperature), g)
    }

    /// Row-wise log-softmax of `a / temperature`.
    pub fn log_softmax(&mut self, a: Var, temperature: f64) -> Var {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x / temperature));
            let lse = row.iter().map(|&x| (x / temperature - max).exp()).sum::<f64>().ln() + max;
            for x in row.iter_mut() {
                *x = *x / temperature - lse;
            }
        }
        let g = self.grad_of(&[a]);
        self.push(value, Op::LogSoftmax(a, temperature), g)
    }

    /// Sum of each row, as an `rows x 1` matrix.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let sums = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let value = Tensor::matrix(t.rows(), 1, sums);
        let g = self.grad_of(&[a]);
        self.push(value, Op::RowSum(a), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let g = self.grad_of(&[a]);
        self.push(value, Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let g = self.grad_of(&[a]);
        self.push(value, Op::Mean(a), g)
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let value = Tensor::matrix(rows.len(), c, data);
        let g = self.grad_of(&[a]);
        self.push(value, Op::GatherRows(a, rows.to_vec()), g)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            panic!("{}", Error::Shape { op: "concat_cols", left: ta.shape().to_vec(), right: tb.shape().to_vec() });
        }
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let value = Tensor::matrix(ta.rows(), ta.cols() + tb.cols(), data);
        let g = self.grad_of(&[a, b]);
        self.push(value, Op::ConcatCols(a, b), g)
    }

    /// Mean softmax cross-entropy of `logits` over the listed `rows`, where
    /// `targets[j]` is the class of `rows[j]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], rows: &[usize]) -> Var {
        assert_eq!(targets.len(), rows.len(), "cross_entropy: targets and rows differ in length");
        assert!(!rows.is_empty(), "cross_entropy over zero rows");
        let probs = self.value(logits).softmax_rows(1.0);
        let loss = rows.iter().zip(targets).map(|(&r, &y)| -probs.at(r, y).max(PROB_FLOOR).ln()).sum::<f64>()
            / rows.len() as f64;
        let g = self.grad_of(&[logits]);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), rows: rows.to_vec(), probs };
        self.push(Tensor::scalar(loss), op, g)
    }

    /// Mean of `-ln p[row, target]` over the listed rows, for `probs` that are
    /// already probabilities.
    pub fn nll_prob(&mut self, probs: Var, targets: &[usize], rows: &[usize]) -> Var {
        assert_eq!(targets.len(), rows.len(), "nll_prob: targets and rows differ in length");
        assert!(!rows.is_empty(), "nll_prob over zero rows");
        let p = self.value(probs);
        let loss =
            rows.iter().zip(targets).map(|(&r, &y)| -p.at(r, y).max(PROB_FLOOR).ln()).sum::<f64>() / rows.len() as f64;
        let g = self.grad_of(&[probs]);
        self.push(Tensor::scalar(loss), Op::NllProb { probs, targets: targets.to_vec(), rows: rows.to_vec() }, g)
    }

    /// Mean over rows of `KL(target_i || softmax(logits_i / temperature))`.
    /// The target is a constant.
    pub fn kl_div(&mut self, target: &Tensor, logits: Var, temperature: f64) -> Var {
        same_shape("kl_div", target, self.value(logits));
        let q = self.value(logits).softmax_rows(temperature);
        let rows = q.rows();
        let loss = (0..rows)
            .map(|r| {
                target
                    .row(r)
                    .iter()
                    .zip(q.row(r))
                    .filter(|(&t, _)| t > 0.0)
                    .map(|(&t, &qv)| t * (t.max(PROB_FLOOR).ln() - qv.max(PROB_FLOOR).ln()))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / rows as f64;
        let g = self.grad_of(&[logits]);
        let op = Op::KlDiv { logits, temperature, target: target.clone(), q };
        self.push(Tensor::scalar(loss), op, g)
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and 0/1 `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Var {
        same_shape("bce_with_logits", self.value(logits), targets);
        let x = self.value(logits);
        let loss =
            x.data().iter().zip(targets.data()).map(|(&z, &y)| y * softplus(-z) + (1.0 - y) * softplus(z)).sum::<f64>()
                / x.len() as f64;
        let g = self.grad_of(&[logits]);
        self.push(Tensor::scalar(loss), Op::BceWithLogits { logits, targets: targets.clone() }, g)
    }

    /// Mean squared error against a constant target.
    pub fn squared_error(&mut self, pred: Var, target: &Tensor) -> Var {
        same_shape("squared_error", self.value(pred), target);
        let p = self.value(pred);
        let loss = p.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        let g = self.grad_of(&[pred]);
        self.push(Tensor::scalar(loss), Op::SquaredError { pred, target: target.clone() }, g)
    }

    /// Row-wise `w_k e^{z_k} / Σ_j w_j e^{z_j}`: a softmax restricted by
    /// nonnegative weights. Panics if a row's weights are all zero.
    pub fn weighted_softmax(&mut self, logits: Var, weights: Var) -> Var {
        same_shape("weighted_softmax", self.value(logits), self.value(weights));
        let (z, w) = (self.value(logits), self.value(weights));
        let mut exp_shifted = z.clone();
        let mut value = z.clone();
        for r in 0..z.rows() {
            let max = z.row(r).iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let e_row = exp_shifted.row_mut(r);
            for x in e_row.iter_mut() {
                *x = (*x - max).exp();
            }
            let total: f64 = e_row.iter().zip(w.row(r)).map(|(e, wk)| e * wk).sum();
            assert!(total > 0.0, "weighted_softmax: row {r} has no positive weight");
            let e_row = exp_shifted.row(r).to_vec();
            for ((out, e), wk) in value.row_mut(r).iter_mut().zip(&e_row).zip(w.row(r)) {
                *out = wk * e / total;
            }
        }
        let g = self.grad_of(&[logits, weights]);
        self.push(value, Op::WeightedSoftmax { logits, weights, exp_shifted }, g)
    }

    /// `out[i] = Σ_k weights[i, k] · components[k, i, :]` for a constant
    /// `K x n x C` stack of components.
    pub fn mix(&mut self, weights: Var, components: &Tensor) -> Var {
        let w = self.value(weights);
        let shape = components.shape();
        if shape.len() != 3 || shape[0] != w.cols() || shape[1] != w.rows() {
            panic!("{}", Error::Shape { op: "mix", left: w.shape().to_vec(), right: shape.to_vec() });
        }
        let (k_count, n, c) = (shape[0], shape[1], shape[2]);
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            for k in 0..k_count {
                let wk = w.at(i, k);
                if wk == 0.0 {
                    continue;
                }
                let comp = &components.data()[(k * n + i) * c..(k * n + i + 1) * c];
                for (o, &p) in out[i * c..(i + 1) * c].iter_mut().zip(comp) {
                    *o += wk * p;
                }
            }
        }
        let value = Tensor::matrix(n, c, out);
        let g = self.grad_of(&[weights]);
        self.push(value, Op::Mix { weights, components: components.clone() }, g)
    }

    /// Divides each row by its maximum entry (lowest index on ties). Rows
    /// must be strictly positive.
    pub fn row_max_normalize(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let argmax = t.argmax_rows();
        let mut value = t.clone();
        for (r, &m) in argmax.iter().enumerate() {
            let max = t.at(r, m);
            assert!(max > 0.0, "row_max_normalize: row {r} has nonpositive maximum {max}");
            for x in value.row_mut(r).iter_mut() {
                *x /= max;
            }
            // exact 1 regardless of rounding
            value.set(r, m, 1.0);
        }
        let g = self.grad_of(&[a]);
        self.push(value, Op::RowMaxNormalize { input: a, argmax }, g)
    }

    /// Forward value `hard`, backward identity into `soft`.
    pub fn straight_through(&mut self, soft: Var, hard: Tensor) -> Var {
        same_shape("straight_through", self.value(soft), &hard);
        let g = self.grad_of(&[soft]);
        self.push(hard, Op::StraightThrough(soft), g)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let out = self.value(loss);
        if !out.is_scalar() {
            return Err(Error::invalid(format!("backward needs a scalar loss, got shape {:?}", out.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(out.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.needs(a) {
                    self.accumulate(grads, a, matmul_nt(g, self.value(b)));
                }
                if self.needs(b) {
                    self.accumulate(grads, b, matmul_tn(self.value(a), g));
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|x| -x));
            }
            &Op::AddRow(a, row) => {
                self.accumulate(grads, a, g.clone());
                if self.needs(row) {
                    let mut acc = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (s, x) in acc.iter_mut().zip(g.row(r)) {
                            *s += x;
                        }
                    }
                    let shape = self.value(row).shape().to_vec();
                    self.accumulate(grads, row, Tensor::vector(acc).reshape(&shape));
                }
            }
            &Op::Mul(a, b) => {
                if self.needs(a) {
                    self.accumulate(grads, a, g.zip_map(self.value(b), |x, y| x * y));
                }
                if self.needs(b) {
                    self.accumulate(grads, b, g.zip_map(self.value(a), |x, y| x * y));
                }
            }
            &Op::MulRow(a, row) => {
                let (ta, tr) = (self.value(a), self.value(row));
                if self.needs(a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        for (x, b) in ga.row_mut(r).iter_mut().zip(tr.data()) {
                            *x *= b;
                        }
                    }
                    self.accumulate(grads, a, ga);
                }
                if self.needs(row) {
                    let mut acc = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for ((s, x), y) in acc.iter_mut().zip(g.row(r)).zip(ta.row(r)) {
                            *s += x * y;
                        }
                    }
                    self.accumulate(grads, row, Tensor::vector(acc).reshape(tr.shape()));
                }
            }
            &Op::Scale(a, factor) => self.accumulate(grads, a, g.map(|x| x * factor)),
            &Op::AddScalar(a) => self.accumulate(grads, a, g.clone()),
            &Op::Relu(a) => {
                let ga = g.zip_map(self.value(a), |gx, x| if x > 0.0 { gx } else { 0.0 });
                self.accumulate(grads, a, ga);
            }
            &Op::Sigmoid(a) => {
                let ga = g.zip_map(&node.value, |gx, s| gx * s * (1.0 - s));
                self.accumulate(grads, a, ga);
            }
            &Op::Log(a) => {
                let ga = g.zip_map(self.value(a), |gx, x| if x > PROB_FLOOR { gx / x } else { 0.0 });
                self.accumulate(grads, a, ga);
            }
            &Op::Transpose(a) => self.accumulate(grads, a, g.transpose().reshape(self.value(a).shape())),
            &Op::Softmax(a, temperature) => {
                let s = &node.value;
                let mut ga = g.clone();
                for r in 0..s.rows() {
                    let dot: f64 = g.row(r).iter().zip(s.row(r)).map(|(x, y)| x * y).sum();
                    for ((out, &gx), &sx) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(s.row(r)) {
                        *out = sx * (gx - dot) / temperature;
                    }
                }
                self.accumulate(grads, a, ga);
            }
            &Op::LogSoftmax(a, temperature) => {
                let ls = &node.value;
                let mut ga = g.clone();
                for r in 0..ls.rows() {
                    let total: f64 = g.row(r).iter().sum();
                    for ((out, &gx), &l) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(ls.row(r)) {
                        *out = (gx - l.exp() * total) / temperature;
                    }
                }
                self.accumulate(grads, a, ga);
            }
            &Op::RowSum(a) => {
                let ta = self.value(a);
                let mut ga = Tensor::zeros(ta.shape());
                for r in 0..ta.rows() {
                    let gr = g.data()[r];
                    ga.row_mut(r).iter_mut().for_each(|x| *x = gr);
                }
                self.accumulate(grads, a, ga);
            }
            &Op::Sum(a) => self.accumulate(grads, a, Tensor::full(self.value(a).shape(), g.item())),
            &Op::Mean(a) => {
                let ta = self.value(a);
                self.accumulate(grads, a, Tensor::full(ta.shape(), g.item() / ta.len() as f64));
            }
            Op::GatherRows(a, rows) => {
                let mut ga = Tensor::zeros(self.value(*a).shape());
                for (j, &r) in rows.iter().enumerate() {
                    for (x, y) in ga.row_mut(r).iter_mut().zip(g.row(j)) {
                        *x += y;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            &Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(a).cols(), self.value(b).cols());
                let rows = g.rows();
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    ga.extend_from_slice(&g.row(r)[..ca]);
                    gb.extend_from_slice(&g.row(r)[ca..]);
                }
                self.accumulate(grads, a, Tensor::matrix(rows, ca, ga));
                self.accumulate(grads, b, Tensor::matrix(rows, cb, gb));
            }
            Op::CrossEntropy { logits, targets, rows, probs } => {
                let scale = g.item() / rows.len() as f64;
                let mut gl = Tensor::zeros(probs.shape());
                for (&r, &y) in rows.iter().zip(targets) {
                    for (out, &p) in gl.row_mut(r).iter_mut().zip(probs.row(r)) {
                        *out += p * scale;
                    }
                    let cur = gl.at(r, y);
                    gl.set(r, y, cur - scale);
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::NllProb { probs, targets, rows } => {
                let p = self.value(*probs);
                let scale = g.item() / rows.len() as f64;
                let mut gp = Tensor::zeros(p.shape());
                for (&r, &y) in rows.iter().zip(targets) {
                    let v = p.at(r, y);
                    if v > PROB_FLOOR {
                        let cur = gp.at(r, y);
                        gp.set(r, y, cur - scale / v);
                    }
                }
                self.accumulate(grads, *probs, gp);
            }
            Op::KlDiv { logits, temperature, target, q } => {
                let scale = g.item() / (q.rows() as f64 * temperature);
                let mut gl = q.clone();
                for r in 0..q.rows() {
                    let mass: f64 = target.row(r).iter().sum();
                    for (out, &t) in gl.row_mut(r).iter_mut().zip(target.row(r)) {
                        *out = (*out * mass - t) * scale;
                    }
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::BceWithLogits { logits, targets } => {
                let x = self.value(*logits);
                let scale = g.item() / x.len() as f64;
                let gl = x.zip_map(targets, |z, y| (sigmoid(z) - y) * scale);
                self.accumulate(grads, *logits, gl);
            }
            Op::SquaredError { pred, target } => {
                let p = self.value(*pred);
                let scale = 2.0 * g.item() / p.len() as f64;
                self.accumulate(grads, *pred, p.zip_map(target, |a, b| (a - b) * scale));
            }
            Op::WeightedSoftmax { logits, weights, exp_shifted } => {
                let lam = &node.value;
                let w = self.value(*weights);
                let mut gz = Tensor::zeros(lam.shape());
                let mut gw = Tensor::zeros(lam.shape());
                for r in 0..lam.rows() {
                    let dot: f64 = g.row(r).iter().zip(lam.row(r)).map(|(x, y)| x * y).sum();
                    let total: f64 = exp_shifted.row(r).iter().zip(w.row(r)).map(|(e, wk)| e * wk).sum();
                    for k in 0..lam.cols() {
                        let centered = g.at(r, k) - dot;
                        gz.set(r, k, lam.at(r, k) * centered);
                        gw.set(r, k, exp_shifted.at(r, k) / total * centered);
                    }
                }
                self.accumulate(grads, *logits, gz);
                self.accumulate(grads, *weights, gw);
            }
            Op::Mix { weights, components } => {
                let shape = components.shape();
                let (k_count, n, c) = (shape[0], shape[1], shape[2]);
                let mut gw = Tensor::zeros(&[n, k_count]);
                for i in 0..n {
                    for k in 0..k_count {
                        let comp = &components.data()[(k * n + i) * c..(k * n + i + 1) * c];
                        gw.set(i, k, g.row(i).iter().zip(comp).map(|(x, y)| x * y).sum());
                    }
                }
                self.accumulate(grads, *weights, gw);
            }
            Op::RowMaxNormalize { input, argmax } => {
                let x = self.value(*input);
                let mut gx = Tensor::zeros(x.shape());
                for (r, &m) in argmax.iter().enumerate() {
                    let max = x.at(r, m);
                    let mut at_max = 0.0;
                    for k in 0..x.cols() {
                        if k == m {
                            continue;
                        }
                        gx.set(r, k, g.at(r, k) / max);
                        at_max -= g.at(r, k) * x.at(r, k) / (max * max);
                    }
                    gx.set(r, m, at_max);
                }
                self.accumulate(grads, *input, gx);
            }
            &Op::StraightThrough(soft) => self.accumulate(grads, soft, g.clone()),
        }
    }
}
