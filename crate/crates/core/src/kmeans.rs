//! Lloyd's algorithm with k-means++ seeding, best-of-restarts, and
//! deterministic seeded RNG. Restarts run in parallel; the winner is chosen
//! by (inertia, restart index) so results do not depend on scheduling.

use crate::error::{Error, Result};
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<DVector<f64>>,
    /// Total within-cluster sum of squares.
    pub inertia: f64,
}

/// Best of `restarts` seeded k-means runs on `points`.
pub fn kmeans(
    points: &[DVector<f64>],
    g: usize,
    restarts: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::EmptyInput("kmeans points"));
    }
    if g == 0 || g > points.len() {
        return Err(Error::InvalidConfig(format!(
            "kmeans needs 1 <= G <= N, got G = {g} with N = {}",
            points.len()
        )));
    }
    let runs: Vec<(f64, KMeansResult)> = (0..restarts.max(1))
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(run as u64));
            let result = lloyd_once(points, g, &mut rng, max_iters);
            (result.inertia, result)
        })
        .collect();
    let best = runs
        .into_iter()
        .enumerate()
        .min_by(|(ia, (fa, _)), (ib, (fb, _))| {
            fa.partial_cmp(fb).unwrap().then(ia.cmp(ib))
        })
        .map(|(_, (_, r))| r)
        .expect("at least one restart ran");
    Ok(best)
}

fn lloyd_once(
    points: &[DVector<f64>],
    g: usize,
    rng: &mut ChaCha8Rng,
    max_iters: usize,
) -> KMeansResult {
    let n = points.len();
    let mut centroids = plus_plus_seeds(points, g, rng);
    let mut labels = vec![0usize; n];

    for _ in 0..max_iters {
        let mut changed = false;
        for (i, point) in points.iter().enumerate() {
            let nearest = nearest_centroid(point, &centroids);
            if labels[i] != nearest {
                labels[i] = nearest;
                changed = true;
            }
        }
        // Recompute means; an emptied cluster is re-seeded at the point
        // farthest from its current centroid.
        let dim = points[0].len();
        let mut sums = vec![DVector::<f64>::zeros(dim); g];
        let mut counts = vec![0usize; g];
        for (i, point) in points.iter().enumerate() {
            sums[labels[i]] += point;
            counts[labels[i]] += 1;
        }
        for k in 0..g {
            if counts[k] == 0 {
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| {
                        let da = (*a - &centroids[k]).norm_squared();
                        let db = (*b - &centroids[k]).norm_squared();
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[k] = points[far].clone();
                changed = true;
            } else {
                centroids[k] = &sums[k] / counts[k] as f64;
            }
        }
        if !changed {
            break;
        }
    }

    for (i, point) in points.iter().enumerate() {
        labels[i] = nearest_centroid(point, &centroids);
    }
    let inertia = points
        .iter()
        .zip(labels.iter())
        .map(|(p, &k)| (p - &centroids[k]).norm_squared())
        .sum();
    KMeansResult {
        labels,
        centroids,
        inertia,
    }
}

fn nearest_centroid(point: &DVector<f64>, centroids: &[DVector<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let d = (point - c).norm_squared();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

fn plus_plus_seeds(points: &[DVector<f64>], g: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(g);
    centroids.push(points[rng.gen_range(0..n)].clone());
    let mut dist2: Vec<f64> = points
        .iter()
        .map(|p| (p - &centroids[0]).norm_squared())
        .collect();
    while centroids.len() < g {
        let total: f64 = dist2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            let d = (p - centroids.last().unwrap()).norm_squared();
            if d < dist2[i] {
                dist2[i] = d;
            }
        }
    }
    centroids
}
