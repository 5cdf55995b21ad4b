#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use trainmap::ghmm::GaussianHmm;

pub fn random_simplex<R: Rng>(k: usize, rng: &mut R) -> DVector<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    DVector::from_iterator(k, v.into_iter().map(|x| x / s))
}

pub fn random_spd<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.3
}

pub fn random_model<R: Rng>(k: usize, d: usize, rng: &mut R) -> GaussianHmm {
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        let row = random_simplex(k, rng);
        a.row_mut(i).copy_from(&row.transpose());
    }
    GaussianHmm::new(
        random_simplex(k, rng),
        a,
        (0..k)
            .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.5..1.5)))
            .collect(),
        (0..k).map(|_| random_spd(d, rng)).collect(),
    )
    .unwrap()
}

pub fn random_sequence<R: Rng>(t: usize, d: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(t, d, |_, _| rng.random_range(-2.0..2.0))
}

/// Every state path of length `t` over `k` states.
pub fn all_paths(k: usize, t: usize) -> Vec<Vec<usize>> {
    let mut paths = vec![vec![]];
    for _ in 0..t {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect();
    }
    paths
}

/// Direct multivariate normal log density through an explicit inverse and determinant.
pub fn naive_log_density(x: &[f64], mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let inv = cov.clone().try_inverse().unwrap();
    let diff = DVector::from_column_slice(x) - mean;
    let quad = (diff.transpose() * inv * &diff)[(0, 0)];
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + cov.determinant().ln() + quad)
}

/// Joint log probability of a path, computed with the naive density.
pub fn naive_path_log_prob(model: &GaussianHmm, seq: &DMatrix<f64>, path: &[usize]) -> f64 {
    let row = |t: usize| -> Vec<f64> { seq.row(t).iter().copied().collect() };
    let emit = |t: usize, s: usize| naive_log_density(&row(t), &model.means()[s], &model.covariances()[s]);
    let mut lp = model.initial()[path[0]].ln() + emit(0, path[0]);
    for t in 1..path.len() {
        lp += model.transition()[(path[t - 1], path[t])].ln() + emit(t, path[t]);
    }
    lp
}

/// The canonical 3-state, 4-feature synthetic family.
pub fn three_state_truth() -> GaussianHmm {
    let cov = |scale: f64, rho: f64| {
        let mut c = DMatrix::identity(4, 4) * scale;
        c[(0, 1)] = rho * scale;
        c[(1, 0)] = rho * scale;
        c
    };
    GaussianHmm::new(
        DVector::from_column_slice(&[0.5, 0.3, 0.2]),
        DMatrix::from_row_slice(3, 3, &[0.90, 0.07, 0.03, 0.05, 0.90, 0.05, 0.04, 0.06, 0.90]),
        vec![
            DVector::from_column_slice(&[0.0, 0.0, 0.0, 0.0]),
            DVector::from_column_slice(&[3.0, -2.0, 1.5, 0.0]),
            DVector::from_column_slice(&[-2.5, 1.0, 3.0, 2.5]),
        ],
        vec![cov(0.6, 0.3), cov(0.5, -0.2), cov(0.7, 0.0)],
    )
    .unwrap()
}

/// Permutation `perm` (fitted state `perm[i]` ↔ true state `i`) minimizing mean distance.
pub fn best_permutation(truth: &GaussianHmm, fitted: &GaussianHmm) -> Vec<usize> {
    let k = truth.n_states();
    permutations(k)
        .into_iter()
        .min_by(|a, b| {
            let cost = |p: &Vec<usize>| -> f64 {
                (0..k).map(|i| (&truth.means()[i] - &fitted.means()[p[i]]).norm()).sum()
            };
            cost(a).total_cmp(&cost(b))
        })
        .unwrap()
}

pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}
