use std::collections::{HashMap, VecDeque};

use super::Graph;
use crate::error::{Error, Result};

/// Hop distance from `source` to every node; `None` when unreachable.
pub fn bfs_distances(neighbors: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; neighbors.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap_or(0) + 1;
        for &v in &neighbors[u] {
            if dist[v].is_none() {
                dist[v] = Some(d);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Bucket of a hop distance: distance `d < max_hop` maps to class `d - 1`,
/// and anything at least `max_hop` away (or unreachable) maps to the last
/// class, `max_hop - 1`.
pub fn distance_class(distance: Option<usize>, max_hop: usize) -> usize {
    match distance {
        Some(d) if d < max_hop => d - 1,
        _ => max_hop - 1,
    }
}

/// Shortest-path class of each pair, with `max_hop` classes in total.
pub fn shortest_path_classes(g: &Graph, pairs: &[(usize, usize)], max_hop: usize) -> Result<Vec<usize>> {
    if max_hop == 0 {
        return Err(Error::invalid("max_hop must be at least 1"));
    }
    let neighbors = g.neighbors();
    let mut cache: HashMap<usize, Vec<Option<usize>>> = HashMap::new();
    let mut out = Vec::with_capacity(pairs.len());
    for &(u, v) in pairs {
        if u >= g.n() || v >= g.n() {
            return Err(Error::invalid(format!("pair ({u}, {v}) references a node >= {}", g.n())));
        }
        if u == v {
            return Err(Error::invalid(format!("pair ({u}, {v}) has identical endpoints")));
        }
        let dist = cache.entry(u).or_insert_with(|| bfs_distances(&neighbors, u));
        out.push(distance_class(dist[v], max_hop));
    }
    Ok(out)
}
