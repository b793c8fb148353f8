//! Graph data model and the combinatorial routines behind the pre-training
//! task pool.

mod adjacency;
mod io;
mod kmeans;
mod partition;
mod paths;
mod sbm;
mod similarity;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub use adjacency::{normalize_adjacency, NormalizedAdjacency};
pub use io::{load_dataset, parse_dataset, render_dataset, save_dataset, DatasetMeta, DatasetText};
pub use kmeans::{kmeans, kmeans_with_history, KMeansResult};
pub use partition::partition_graph;
pub use paths::{bfs_distances, distance_class, shortest_path_classes};
pub use sbm::{generate_sbm, SbmSpec};
pub use similarity::{pair_cosine_similarity, sample_pairs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// An undirected, node-labelled graph with a train/val/test split.
///
/// Edges are stored once each as `(u, v)` with `u < v`; there are no
/// self-loops or duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
    splits: Vec<Split>,
}

impl Graph {
    pub fn new(
        n: usize,
        edges: Vec<(usize, usize)>,
        features: Tensor,
        labels: Vec<usize>,
        classes: usize,
        splits: Vec<Split>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Dataset("graph has no nodes".into()));
        }
        if classes == 0 {
            return Err(Error::Dataset("graph has no classes".into()));
        }
        if features.shape().len() != 2 || features.rows() != n {
            return Err(Error::Dataset(format!("features have shape {:?}, expected {n} rows", features.shape())));
        }
        if labels.len() != n || splits.len() != n {
            return Err(Error::Dataset(format!(
                "{} labels and {} split entries for {n} nodes",
                labels.len(),
                splits.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::Dataset(format!("node {i} has label {y}, but only {classes} classes")));
        }
        if !splits.contains(&Split::Train) {
            return Err(Error::Dataset("train split is empty".into()));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut canonical = Vec::with_capacity(edges.len());
        for &(u, v) in &edges {
            if u >= n || v >= n {
                return Err(Error::Dataset(format!("edge ({u}, {v}) references a node >= {n}")));
            }
            if u == v {
                return Err(Error::Dataset(format!("self-loop on node {u}")));
            }
            let e = (u.min(v), u.max(v));
            if !seen.insert(e) {
                return Err(Error::Dataset(format!("duplicate edge ({}, {})", e.0, e.1)));
            }
            canonical.push(e);
        }
        Ok(Graph { n, edges: canonical, features, labels, classes, splits })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Node indices in `split`, ascending.
    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.n).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn mask(&self, split: Split) -> Vec<bool> {
        self.splits.iter().map(|&s| s == split).collect()
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Same graph with different node features.
    pub fn with_features(&self, features: Tensor) -> Result<Graph> {
        Graph::new(self.n, self.edges.clone(), features, self.labels.clone(), self.classes, self.splits.clone())
    }

    /// Fraction of `rows` whose predicted class matches the label.
    pub fn accuracy(&self, predictions: &[usize], rows: &[usize]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let hits = rows.iter().filter(|&&r| predictions[r] == self.labels[r]).count();
        hits as f64 / rows.len() as f64
    }
}

/// Connected component id of each node, numbered in order of lowest member.
pub(crate) fn components(neighbors: &[Vec<usize>]) -> Vec<usize> {
    let n = neighbors.len();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = next;
        stack.push(start);
        while let Some(u) = stack.pop() {
            for &v in &neighbors[u] {
                if comp[v] == usize::MAX {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comp
}
