//! Lloyd's k-means with k-means++ seeding and best-of-n restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::Execution;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves further than this.
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 300,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(x, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = x.rows();
    let mut centroids = Matrix::zeros(k, x.cols());
    centroids
        .row_mut(0)
        .copy_from_slice(x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(x.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), centroids.row(c)));
        }
    }
    centroids
}

fn lloyd(x: &Matrix, mut centroids: Matrix, config: &KMeansConfig) -> KMeansFit {
    let (n, d) = x.shape();
    let k = centroids.rows();
    let mut assignments = vec![0; n];
    for _ in 0..config.max_iters {
        for (i, a) in assignments.iter_mut().enumerate() {
            *a = nearest(x.row(i), &centroids).0;
        }
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, &v) in sums.row_mut(a).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        #[allow(clippy::needless_range_loop)]
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the point worst served by its centroid
                let far = (0..n)
                    .max_by(|&p, &q| {
                        let dp = sq_dist(x.row(p), centroids.row(assignments[p]));
                        let dq = sq_dist(x.row(q), centroids.row(assignments[q]));
                        dp.total_cmp(&dq).then(q.cmp(&p))
                    })
                    .expect("non-empty data");
                sums.row_mut(c).copy_from_slice(x.row(far));
                counts[c] = 1;
                assignments[far] = c;
            }
            let inv = 1.0 / counts[c] as f64;
            sums.row_mut(c).iter_mut().for_each(|v| *v *= inv);
            shift = shift.max(sq_dist(sums.row(c), centroids.row(c)).sqrt());
        }
        centroids = sums;
        if shift <= config.tolerance {
            break;
        }
    }
    let mut inertia = 0.0;
    for (i, a) in assignments.iter_mut().enumerate() {
        let (c, dist) = nearest(x.row(i), &centroids);
        *a = c;
        inertia += dist;
    }
    KMeansFit {
        centroids,
        assignments,
        inertia,
    }
}

/// Clusters the rows of `x` into `k` groups, keeping the restart with the
/// lowest inertia (earliest restart on ties).
pub fn kmeans(
    x: &Matrix,
    k: usize,
    seed: u64,
    config: &KMeansConfig,
    exec: Execution,
) -> Result<KMeansFit> {
    if k == 0 || k > x.rows() {
        return Err(Error::contract(format!(
            "k-means with k={k} on {} points",
            x.rows()
        )));
    }
    if config.restarts == 0 {
        return Err(Error::config("k-means needs at least one restart"));
    }
    let fits = exec.map(config.restarts, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r as u64]));
        lloyd(x, plus_plus(x, k, &mut rng), config)
    });
    let mut best: Option<KMeansFit> = None;
    for f in fits {
        if best.as_ref().is_none_or(|b| f.inertia < b.inertia) {
            best = Some(f);
        }
    }
    Ok(best.expect("at least one restart"))
}
