//! Helpers shared by the integration tests.
#![allow(dead_code)]

use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use was::graph::{Graph, Split};
use was::numerics::Tensor;

/// `rows x cols` matrices with entries in `[-1, 1]`.
pub fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0..1.0f64, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d))
}

/// Row-stochastic `rows x cols` matrices with every entry positive.
pub fn distributions(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.01..1.0f64, rows * cols).prop_map(move |d| normalize_rows(Tensor::matrix(rows, cols, d)))
}

pub fn normalize_rows(mut t: Tensor) -> Tensor {
    for r in 0..t.rows() {
        let s: f64 = t.row(r).iter().sum();
        t.row_mut(r).iter_mut().for_each(|x| *x /= s);
    }
    t
}

/// Erdős–Rényi graph with random features, labels and a split whose first
/// node is always in the training set.
pub fn random_graph(n: usize, p: f64, feat_dim: usize, classes: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let features = Tensor::matrix(n, feat_dim, (0..n * feat_dim).map(|_| rng.random_range(-1.0..1.0)).collect());
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let splits = (0..n)
        .map(|i| match (i, rng.random_range(0..3)) {
            (0, _) | (_, 0) => Split::Train,
            (_, 1) => Split::Val,
            _ => Split::Test,
        })
        .collect();
    Graph::new(n, edges, features, labels, classes, splits).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
