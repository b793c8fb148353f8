//! Two-layer graph-convolution encoder and linear prediction head, shared by
//! teachers and the student, plus JSON checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::numerics::{glorot, Tape, Tensor, Var};

/// Encoder weights: `w1` is `d x F`, `w2` is `F x F`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w1: Tensor,
    pub w2: Tensor,
}

impl EncoderParams {
    pub fn glorot<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        EncoderParams { w1: glorot(&[input_dim, hidden], rng), w2: glorot(&[hidden, hidden], rng) }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w2.cols()
    }

    pub fn to_checkpoint(&self, config: serde_json::Value) -> Checkpoint {
        Checkpoint::new(config, [("w1", &self.w1), ("w2", &self.w2)])
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let p = EncoderParams { w1: ckpt.tensor("w1")?.clone(), w2: ckpt.tensor("w2")?.clone() };
        if p.w1.shape().len() != 2 || p.w2.shape() != [p.w1.cols(), p.w1.cols()] {
            return Err(Error::Shape {
                op: "encoder checkpoint",
                left: p.w1.shape().to_vec(),
                right: p.w2.shape().to_vec(),
            });
        }
        Ok(p)
    }
}

/// Linear head: `w` is `F x C`, `b` has length `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl HeadParams {
    pub fn glorot<R: Rng + ?Sized>(hidden: usize, classes: usize, rng: &mut R) -> Self {
        HeadParams { w: glorot(&[hidden, classes], rng), b: Tensor::zeros(&[classes]) }
    }

    pub fn classes(&self) -> usize {
        self.w.cols()
    }

    pub fn to_checkpoint(&self, config: serde_json::Value) -> Checkpoint {
        Checkpoint::new(config, [("w", &self.w), ("b", &self.b)])
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let p = HeadParams { w: ckpt.tensor("w")?.clone(), b: ckpt.tensor("b")?.clone() };
        if p.w.shape().len() != 2 || p.b.len() != p.w.cols() {
            return Err(Error::Shape {
                op: "head checkpoint",
                left: p.w.shape().to_vec(),
                right: p.b.shape().to_vec(),
            });
        }
        Ok(p)
    }
}

/// Tape variables for an encoder.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub w1: Var,
    pub w2: Var,
}

/// Tape variables for a head.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w: Var,
    pub b: Var,
}

impl EncoderParams {
    pub fn on_tape(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars { w1: tape.param(self.w1.clone()), w2: tape.param(self.w2.clone()) }
    }
}

impl HeadParams {
    pub fn on_tape(&self, tape: &mut Tape) -> HeadVars {
        HeadVars { w: tape.param(self.w.clone()), b: tape.param(self.b.clone()) }
    }
}

/// `Â · relu(Â · X · W1) · W2`, recorded on `tape`.
pub fn encode_on_tape(tape: &mut Tape, adj: Var, x: Var, p: EncoderVars) -> Var {
    let xw = tape.matmul(x, p.w1);
    let h1 = tape.matmul(adj, xw);
    let h1 = tape.relu(h1);
    let hw = tape.matmul(h1, p.w2);
    tape.matmul(adj, hw)
}

/// Head logits `H · W + b`, recorded on `tape`.
pub fn logits_on_tape(tape: &mut Tape, h: Var, p: HeadVars) -> Var {
    let z = tape.matmul(h, p.w);
    tape.add_row(z, p.b)
}

fn check_encode_shapes(adj: &NormalizedAdjacency, x: &Tensor, p: &EncoderParams) -> Result<()> {
    let a = adj.tensor();
    if x.shape().len() != 2 || x.rows() != a.rows() {
        return Err(Error::Shape {
            op: "encode (adjacency, features)",
            left: a.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    if p.w1.rows() != x.cols() {
        return Err(Error::Shape {
            op: "encode (features, w1)",
            left: x.shape().to_vec(),
            right: p.w1.shape().to_vec(),
        });
    }
    if p.w2.rows() != p.w1.cols() {
        return Err(Error::Shape { op: "encode (w1, w2)", left: p.w1.shape().to_vec(), right: p.w2.shape().to_vec() });
    }
    Ok(())
}

/// Node embeddings `H = Â · relu(Â · X · W1) · W2`, `n x F`.
pub fn encode(adj: &NormalizedAdjacency, x: &Tensor, p: &EncoderParams) -> Result<Tensor> {
    check_encode_shapes(adj, x, p)?;
    let mut tape = Tape::new();
    let a = tape.constant(adj.tensor().clone());
    let xv = tape.constant(x.clone());
    let vars = EncoderVars { w1: tape.constant(p.w1.clone()), w2: tape.constant(p.w2.clone()) };
    let h = encode_on_tape(&mut tape, a, xv, vars);
    Ok(tape.value(h).clone())
}

/// Raw head logits `H · W + b`.
pub fn head_logits(h: &Tensor, head: &HeadParams) -> Result<Tensor> {
    if h.cols() != head.w.rows() {
        return Err(Error::Shape { op: "predict", left: h.shape().to_vec(), right: head.w.shape().to_vec() });
    }
    let mut z = h.matmul(&head.w)?;
    for r in 0..z.rows() {
        for (x, b) in z.row_mut(r).iter_mut().zip(head.b.data()) {
            *x += b;
        }
    }
    Ok(z)
}

/// Row-softmax of `(H · W + b) / temperature`.
pub fn predict(h: &Tensor, head: &HeadParams, temperature: f64) -> Result<Tensor> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    Ok(head_logits(h, head)?.softmax_rows(temperature))
}

/// Named parameter tensors plus an echo of the configuration that produced
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new<'a>(config: serde_json::Value, params: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Self {
        Checkpoint { config, params: params.into_iter().map(|(k, v)| (k.to_string(), v.clone())).collect() }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).ok_or_else(|| Error::invalid(format!("checkpoint has no parameter {name:?}")))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::json("checkpoint", e))?;
        if let Some((name, _)) = ckpt.params.iter().find(|(_, t)| !t.all_finite()) {
            return Err(Error::invalid(format!("checkpoint parameter {name:?} has non-finite entries")));
        }
        Ok(ckpt)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Mean cross-entropy of `logits` against `labels` over `rows`.
pub(crate) fn mean_cross_entropy(logits: &Tensor, labels: &[usize], rows: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in rows {
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[labels[i]];
    }
    total / rows.len().max(1) as f64
}
