//! Seeded k-means with farthest-point initialization.
//!
//! Assignments are computed in parallel, but each point's assignment depends
//! only on that point, and centroid sums are reduced sequentially in point
//! order, so results are identical for a given seed on any thread count.

use rand::Rng;
use rayon::prelude::*;

use crate::seed;

pub const DEFAULT_ITERATIONS: usize = 20;

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

/// Index of the nearest centroid, ties to the lowest index.
pub fn nearest(point: &[f32], centroids: &[f32], dim: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

pub fn assign(data: &[f32], centroids: &[f32], dim: usize) -> Vec<usize> {
    data.par_chunks_exact(dim)
        .map(|p| nearest(p, centroids, dim))
        .collect()
}

/// First centroid uniformly at random, then repeatedly the point farthest from
/// every chosen centroid (ties to the lowest index).
fn farthest_point_init(data: &[f32], dim: usize, k: usize, seed: u64) -> Vec<f32> {
    let n = data.len() / dim;
    let mut rng = seed::rng(seed);
    let first = rng.gen_range(0..n);
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);
    let mut min_dist: Vec<f64> = data
        .par_chunks_exact(dim)
        .map(|p| sq_dist(p, &centroids[..dim]))
        .collect();
    while centroids.len() < k * dim {
        let mut pick = 0;
        for (i, &d) in min_dist.iter().enumerate() {
            if d > min_dist[pick] {
                pick = i;
            }
        }
        let chosen = data[pick * dim..(pick + 1) * dim].to_vec();
        min_dist
            .par_iter_mut()
            .zip(data.par_chunks_exact(dim))
            .for_each(|(m, p)| {
                let d = sq_dist(p, &chosen);
                if d < *m {
                    *m = d;
                }
            });
        centroids.extend_from_slice(&chosen);
    }
    centroids
}

/// Clusters `data` (row-major, `dim` columns) into `k` centroids.
///
/// Runs at most `iterations` Lloyd steps, stopping early once assignments no
/// longer change. Empty clusters keep their previous centroid.
pub fn kmeans(data: &[f32], dim: usize, k: usize, iterations: usize, seed: u64) -> Vec<f32> {
    let n = data.len() / dim;
    assert!(dim > 0 && data.len() == n * dim, "ragged input");
    assert!(k >= 1 && k <= n, "need 1 <= k <= n (k = {k}, n = {n})");
    let mut centroids = farthest_point_init(data, dim, k, seed);
    let mut assignment: Option<Vec<usize>> = None;
    for _ in 0..iterations {
        let next = assign(data, &centroids, dim);
        if assignment.as_ref() == Some(&next) {
            break;
        }
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &c) in data.chunks_exact(dim).zip(&next) {
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += f64::from(x);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            for j in 0..dim {
                centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
            }
        }
        assignment = Some(next);
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_distinct_points() {
        let data: Vec<f32> = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let c = kmeans(&data, 2, 3, 20, 5);
        let mut rows: Vec<(i32, i32)> = c
            .chunks_exact(2)
            .map(|r| (r[0] as i32, r[1] as i32))
            .collect();
        rows.sort();
        assert_eq!(rows, vec![(0, 0), (0, 1), (1, 0)]);
    }

    #[test]
    fn separates_two_blobs() {
        let mut data = Vec::new();
        for i in 0..50 {
            let e = (i as f32) * 1e-3;
            data.extend_from_slice(&[e, e]);
            data.extend_from_slice(&[10.0 + e, 10.0 - e]);
        }
        let c = kmeans(&data, 2, 2, 20, 1);
        let a = assign(&data, &c, 2);
        for pair in a.chunks(2) {
            assert_ne!(pair[0], pair[1]);
        }
        assert!(a.iter().step_by(2).all(|&x| x == a[0]));
    }

    #[test]
    fn deterministic_for_seed() {
        let data: Vec<f32> = (0..400).map(|i| ((i * 37 % 101) as f32).sin()).collect();
        assert_eq!(kmeans(&data, 4, 7, 20, 3), kmeans(&data, 4, 7, 20, 3));
    }
}
