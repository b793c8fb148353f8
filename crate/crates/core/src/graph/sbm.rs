use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Graph, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

/// Parameters of a balanced stochastic block model with Gaussian features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSpec {
    pub n: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    #[serde(default = "SbmSpec::default_feat_dim")]
    pub feat_dim: usize,
    #[serde(default = "SbmSpec::default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SbmSpec {
    fn default_feat_dim() -> usize {
        16
    }

    fn default_noise() -> f64 {
        1.0
    }

    pub fn new(n: usize, classes: usize, p_in: f64, p_out: f64) -> Self {
        SbmSpec { n, classes, p_in, p_out, feat_dim: Self::default_feat_dim(), noise: Self::default_noise(), seed: 0 }
    }

    pub fn with_features(mut self, feat_dim: usize, noise: f64) -> Self {
        self.feat_dim = feat_dim;
        self.noise = noise;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid(format!("SBM needs at least 2 classes, got {}", self.classes)));
        }
        if self.n < self.classes {
            return Err(Error::invalid(format!("SBM needs n >= classes, got n={} classes={}", self.n, self.classes)));
        }
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return Err(Error::invalid(format!(
                "SBM needs 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.feat_dim == 0 {
            return Err(Error::invalid("SBM feature dimension must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid(format!("SBM noise must be finite and >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

/// Generates the graph described by `spec`.
///
/// Node `i` belongs to block `i * classes / n`. Features are the one-hot
/// vector of the node's class (dimension `class % feat_dim`) plus
/// `noise`-scaled standard normal noise. Each class is split 10% / 10% / 80%
/// into train / val / test, with at least one training node per class.
pub fn generate_sbm(spec: &SbmSpec) -> Result<Graph> {
    spec.validate()?;
    let SbmSpec { n, classes, p_in, p_out, feat_dim, noise, seed } = *spec;
    let labels: Vec<usize> = (0..n).map(|i| i * classes / n).collect();

    let mut edge_rng = rng::stream(seed, "sbm/edges", 0);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if edge_rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut feat_rng = rng::stream(seed, "sbm/features", 0);
    let mut features = Tensor::zeros(&[n, feat_dim]);
    for (i, &y) in labels.iter().enumerate() {
        let row = features.row_mut(i);
        for x in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut feat_rng);
            *x = noise * z;
        }
        row[y % feat_dim] += 1.0;
    }

    let mut split_rng = rng::stream(seed, "sbm/splits", 0);
    let mut splits = vec![Split::Test; n];
    for c in 0..classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut split_rng);
        let m = members.len();
        let n_train = ((m as f64 * 0.1).round() as usize).max(1);
        let n_val = ((m as f64 * 0.1).round() as usize).min(m - n_train);
        for &i in &members[..n_train] {
            splits[i] = Split::Train;
        }
        for &i in &members[n_train..n_train + n_val] {
            splits[i] = Split::Val;
        }
    }

    Graph::new(n, edges, features, labels, classes, splits)
}
