use super::Graph;
use crate::numerics::Tensor;

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` as a dense `n x n` matrix, where `D̃` is the
/// degree matrix of `A + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency(Tensor);

impl NormalizedAdjacency {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    /// Reorders rows and columns: entry `(i, j)` of the result is entry
    /// `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> NormalizedAdjacency {
        let n = self.n();
        let mut out = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, self.0.at(perm[i], perm[j]));
            }
        }
        NormalizedAdjacency(out)
    }
}

pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    let n = g.n();
    let mut degree = vec![1.0f64; n];
    for &(u, v) in g.edges() {
        degree[u] += 1.0;
        degree[v] += 1.0;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut a = Tensor::zeros(&[n, n]);
    for (i, &s) in inv_sqrt.iter().enumerate() {
        a.set(i, i, s * s);
    }
    for &(u, v) in g.edges() {
        let w = inv_sqrt[u] * inv_sqrt[v];
        a.set(u, v, w);
        a.set(v, u, w);
    }
    NormalizedAdjacency(a)
}
