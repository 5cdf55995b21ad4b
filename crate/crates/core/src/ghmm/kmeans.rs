//! k-means with k-means++ seeding, used both to initialize Baum-Welch and as
//! a baseline that ignores temporal structure.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

const MAX_LLOYD_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// `K × d`
    pub centroids: DMatrix<f64>,
    pub labels: Vec<usize>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    points
        .row(i)
        .iter()
        .zip(centroids.row(c).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn plus_plus<R: Rng>(points: &DMatrix<f64>, k: usize, rng: &mut R) -> DMatrix<f64> {
    let (n, d) = points.shape();
    let mut centroids = DMatrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from(&points.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from(&points.row(pick));
        for (i, slot) in dist.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(points, i, &centroids, c));
        }
    }
    centroids
}

/// Lloyd iterations from k-means++ seeds over the rows of `points`.
pub fn kmeans<R: Rng>(points: &DMatrix<f64>, k: usize, rng: &mut R) -> Result<KMeansFit> {
    let (n, d) = points.shape();
    if k == 0 {
        return Err(Error::invalid("k-means needs at least one cluster"));
    }
    if k > n {
        return Err(Error::invalid(format!("{k} clusters requested for {n} points")));
    }
    let mut centroids = plus_plus(points, k, rng);
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = sq_dist(points, i, &centroids, 0);
            for c in 1..k {
                let dc = sq_dist(points, i, &centroids, c);
                if dc < best_d {
                    best_d = dc;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = DMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            let mut row = sums.row_mut(l);
            row += points.row(i);
        }
        for c in 0..k {
            if counts[c] == 0 {
                // move an empty cluster onto the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(points, a, &centroids, labels[a])
                            .total_cmp(&sq_dist(points, b, &centroids, labels[b]))
                            .then(b.cmp(&a))
                    })
                    .expect("n > 0");
                centroids.row_mut(c).copy_from(&points.row(far));
                labels[far] = c;
                changed = true;
            } else {
                let row = sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).copy_from(&row);
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n).map(|i| sq_dist(points, i, &centroids, labels[i])).sum();
    Ok(KMeansFit {
        centroids,
        labels,
        inertia,
    })
}

/// Hard-assignment log-likelihood under a spherical Gaussian mixture with a
/// shared variance `inertia / (n d)` and cluster proportions as weights.
pub fn spherical_log_likelihood(fit: &KMeansFit, n: usize, d: usize) -> f64 {
    let k = fit.centroids.nrows();
    let mut counts = vec![0usize; k];
    for &l in &fit.labels {
        counts[l] += 1;
    }
    let (n_f, d_f) = (n as f64, d as f64);
    let var = (fit.inertia / (n_f * d_f)).max(f64::MIN_POSITIVE);
    let mixing: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (c as f64 / n_f).ln())
        .sum();
    mixing - 0.5 * n_f * d_f * (2.0 * std::f64::consts::PI * var).ln() - fit.inertia / (2.0 * var)
}

/// Free parameters of the spherical mixture: weights, means, one variance.
pub fn spherical_n_params(k: usize, d: usize) -> usize {
    (k - 1) + k * d + 1
}
