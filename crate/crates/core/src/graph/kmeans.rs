use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Tensor,
    /// Sum of squared distances to the assigned centroid after each
    /// assignment step.
    pub objective: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm from a seeded k-means++ start. Returns one label in
/// `[0, k)` per row of `features`.
pub fn kmeans(features: &Tensor, k: usize, seed: u64) -> Result<Vec<usize>> {
    kmeans_with_history(features, k, seed).map(|r| r.labels)
}

pub fn kmeans_with_history(features: &Tensor, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = features.rows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("kmeans needs 1 <= k <= n, got k={k}, n={n}")));
    }
    let d = features.cols();
    let mut rng = rng::stream(seed, "kmeans", 0);

    // k-means++ seeding
    let mut centroids = Tensor::zeros(&[k, d]);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(features.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(features.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(features.row(pick));
        for (i, best) in nearest.iter_mut().enumerate() {
            *best = best.min(sq_dist(features.row(i), centroids.row(c)));
        }
    }

    let mut labels = vec![usize::MAX; n];
    let mut objective = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        let mut total = 0.0;
        for (i, label) in labels.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dist = sq_dist(features.row(i), centroids.row(c));
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            total += best_d;
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        objective.push(total);
        if !changed {
            break;
        }

        let mut sums = Tensor::zeros(&[k, d]);
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums.row_mut(c).iter_mut().zip(features.row(i)) {
                *s += x;
            }
        }
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let inv = 1.0 / count as f64;
            for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
        // an empty cluster takes over the point farthest from its centroid
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .map(|i| (i, sq_dist(features.row(i), centroids.row(labels[i]))))
                .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
                .0;
            let donor = labels[far];
            counts[donor] -= 1;
            counts[c] = 1;
            labels[far] = c;
            let point = features.row(far).to_vec();
            centroids.row_mut(c).copy_from_slice(&point);
        }
    }

    Ok(KMeansResult { labels, centroids, objective })
}
