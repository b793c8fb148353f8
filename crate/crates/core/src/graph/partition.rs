use rand::seq::SliceRandom;

use super::{components, Graph};
use crate::error::{Error, Result};
use crate::rng;

/// Splits the nodes into `parts` connected-ish regions by multi-source BFS
/// growth.
///
/// Seeds are drawn from a seeded shuffle, preferring nodes in components that
/// do not yet hold a seed. Regions then grow one BFS frontier at a time in
/// round-robin order. Nodes never reached (components without a seed) are
/// assigned component by component to the currently smallest part.
pub fn partition_graph(g: &Graph, parts: usize, seed: u64) -> Result<Vec<usize>> {
    let n = g.n();
    if parts == 0 || parts > n {
        return Err(Error::invalid(format!("partition needs 1 <= parts <= n, got parts={parts}, n={n}")));
    }
    let neighbors = g.neighbors();
    let comp = components(&neighbors);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "partition", 0));
    let mut seeded_comp = vec![false; n];
    let mut seeds = Vec::with_capacity(parts);
    for &v in &order {
        if seeds.len() == parts {
            break;
        }
        if !seeded_comp[comp[v]] {
            seeded_comp[comp[v]] = true;
            seeds.push(v);
        }
    }
    for &v in &order {
        if seeds.len() == parts {
            break;
        }
        if !seeds.contains(&v) {
            seeds.push(v);
        }
    }

    let mut label = vec![usize::MAX; n];
    let mut sizes = vec![1usize; parts];
    let mut frontiers: Vec<Vec<usize>> = seeds.iter().map(|&s| vec![s]).collect();
    for (p, &s) in seeds.iter().enumerate() {
        label[s] = p;
    }
    loop {
        let mut grew = false;
        for p in 0..parts {
            let mut next = Vec::new();
            for &u in &frontiers[p] {
                for &v in &neighbors[u] {
                    if label[v] == usize::MAX {
                        label[v] = p;
                        next.push(v);
                    }
                }
            }
            sizes[p] += next.len();
            grew |= !next.is_empty();
            frontiers[p] = next;
        }
        if !grew {
            break;
        }
    }

    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let smallest = (0..parts).min_by_key(|&p| (sizes[p], p)).unwrap_or(0);
        for v in 0..n {
            if comp[v] == comp[start] {
                label[v] = smallest;
                sizes[smallest] += 1;
            }
        }
    }
    Ok(label)
}
