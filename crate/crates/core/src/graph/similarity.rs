use std::collections::HashSet;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::Rng;

/// Cosine similarity between the feature rows of each pair.
///
/// Zero-norm rows are an error; sample pairs with [`sample_pairs`] and a
/// filter that excludes them.
pub fn pair_cosine_similarity(features: &Tensor, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let norms: Vec<f64> =
        (0..features.rows()).map(|i| features.row(i).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    pairs
        .iter()
        .map(|&(u, v)| {
            if u >= norms.len() || v >= norms.len() {
                return Err(Error::invalid(format!("pair ({u}, {v}) out of range")));
            }
            if norms[u] == 0.0 || norms[v] == 0.0 {
                return Err(Error::invalid(format!("pair ({u}, {v}) has a zero-norm feature row")));
            }
            let dot: f64 = features.row(u).iter().zip(features.row(v)).map(|(a, b)| a * b).sum();
            Ok((dot / (norms[u] * norms[v])).clamp(-1.0, 1.0))
        })
        .collect()
}

/// Draws up to `budget` distinct unordered pairs `(u, v)`, `u < v`,
/// uniformly without replacement among the pairs whose endpoints both pass
/// `allowed`. Returns fewer pairs only if fewer exist.
pub fn sample_pairs(n: usize, budget: usize, rng: &mut Rng, allowed: impl Fn(usize) -> bool) -> Vec<(usize, usize)> {
    let nodes: Vec<usize> = (0..n).filter(|&i| allowed(i)).collect();
    let m = nodes.len();
    let total = m * m.saturating_sub(1) / 2;
    let budget = budget.min(total);
    if budget == 0 {
        return Vec::new();
    }
    let mut chosen = HashSet::with_capacity(budget);
    let mut out = Vec::with_capacity(budget);
    if budget * 2 > total {
        // dense request: shuffle the full pair list
        let mut all = Vec::with_capacity(total);
        for a in 0..m {
            for b in a + 1..m {
                all.push((nodes[a], nodes[b]));
            }
        }
        for i in 0..budget {
            let j = rng.random_range(i..all.len());
            all.swap(i, j);
        }
        all.truncate(budget);
        return all;
    }
    while out.len() < budget {
        let a = rng.random_range(0..m);
        let b = rng.random_range(0..m);
        if a == b {
            continue;
        }
        let pair = (nodes[a.min(b)], nodes[a.max(b)]);
        if chosen.insert(pair) {
            out.push(pair);
        }
    }
    out
}
