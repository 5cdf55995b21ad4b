//! Baum-Welch estimation over multiple sequences.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inference::forward_backward;
use super::kmeans::kmeans;
use super::model::{check_finite, FitRecord, GaussianHmm};
use crate::error::{Error, Result};

/// Responsibility mass below which a state counts as empty.
const EMPTY_STATE_MASS: f64 = 1e-8;
/// Weight of the Dirichlet draw mixed into uniform initial probabilities.
const INIT_NOISE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Absolute log-likelihood improvement below which EM stops.
    pub tol: f64,
    /// Added to every covariance diagonal after each M-step.
    pub jitter: f64,
    pub restarts: usize,
    pub rng_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 200,
            tol: 1e-4,
            jitter: 1e-6,
            restarts: 5,
            rng_seed: 0,
        }
    }
}

impl FitConfig {
    pub fn record(&self) -> FitRecord {
        FitRecord {
            rng_seed: self.rng_seed,
            restarts: self.restarts,
            jitter: self.jitter,
            tol: self.tol,
            max_iters: self.max_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reinitialization {
    /// EM iteration (1-based M-step count) at which the state was reset.
    pub iteration: usize,
    pub state: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Train log-likelihood of the initial parameters followed by one entry per M-step.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub restart: usize,
    pub rng_seed: u64,
    pub reinitialized: Vec<Reinitialization>,
}

impl FitReport {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihoods.last().expect("at least the initial likelihood")
    }

    /// Largest drop between consecutive likelihoods, skipping steps that
    /// followed a state reinitialization.
    pub fn max_decrease(&self) -> f64 {
        self.log_likelihoods
            .windows(2)
            .enumerate()
            .filter(|(i, _)| !self.reinitialized.iter().any(|r| r.iteration == i + 1))
            .map(|(_, w)| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

fn pooled(train: &[DMatrix<f64>]) -> DMatrix<f64> {
    let d = train[0].ncols();
    let total: usize = train.iter().map(|s| s.nrows()).sum();
    let mut out = DMatrix::zeros(total, d);
    let mut r = 0;
    for seq in train {
        out.view_mut((r, 0), seq.shape()).copy_from(seq);
        r += seq.nrows();
    }
    out
}

fn population_covariance(points: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.nrows() as f64;
    let mean = points.row_mean();
    let mut centered = points.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    centered.transpose() * &centered / n
}

fn with_jitter(mut cov: DMatrix<f64>, jitter: f64) -> DMatrix<f64> {
    for i in 0..cov.nrows() {
        cov[(i, i)] += jitter;
    }
    cov
}

fn noisy_simplex<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(1.0, 1.0).expect("valid shape");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws
        .iter()
        .map(|g| (1.0 - INIT_NOISE) / k as f64 + INIT_NOISE * g / total)
        .collect()
}

struct Workspace<'a> {
    train: &'a [DMatrix<f64>],
    pooled: DMatrix<f64>,
    pooled_cov: DMatrix<f64>,
    k: usize,
    config: FitConfig,
}

impl Workspace<'_> {
    fn initial_model<R: Rng>(&self, rng: &mut R) -> Result<GaussianHmm> {
        let k = self.k;
        let centers = kmeans(&self.pooled, k, rng)?;
        let means: Vec<DVector<f64>> = centers
            .centroids
            .row_iter()
            .map(|r| r.transpose())
            .collect();
        let cov = with_jitter(self.pooled_cov.clone(), self.config.jitter);
        let initial = DVector::from_vec(noisy_simplex(k, rng));
        let mut transition = DMatrix::zeros(k, k);
        for i in 0..k {
            let row = noisy_simplex(k, rng);
            for j in 0..k {
                transition[(i, j)] = row[j];
            }
        }
        GaussianHmm::new(initial, transition, means, vec![cov; k])
    }

    /// One E-step: total log-likelihood plus the statistics for the M-step.
    fn e_step(&self, model: &GaussianHmm) -> (f64, Vec<DMatrix<f64>>, DMatrix<f64>, DVector<f64>) {
        let k = self.k;
        let mut ll = 0.0;
        let mut gammas = Vec::with_capacity(self.train.len());
        let mut xi = DMatrix::zeros(k, k);
        let mut first = DVector::zeros(k);
        for seq in self.train {
            let post = forward_backward(model, seq);
            ll += post.log_likelihood;
            xi += &post.xi_sum;
            first += post.gamma.row(0).transpose();
            gammas.push(post.gamma);
        }
        (ll, gammas, xi, first)
    }

    fn m_step<R: Rng>(
        &self,
        prev: &GaussianHmm,
        gammas: &[DMatrix<f64>],
        xi: &DMatrix<f64>,
        first: &DVector<f64>,
        rng: &mut R,
        empty: &mut Vec<usize>,
    ) -> Result<GaussianHmm> {
        let (k, d) = (self.k, self.pooled.ncols());
        let n_seq = self.train.len() as f64;
        let mut initial = first / n_seq;
        let mut transition = prev.transition().clone();
        for i in 0..k {
            let row_sum: f64 = xi.row(i).sum();
            if row_sum > 0.0 {
                for j in 0..k {
                    transition[(i, j)] = xi[(i, j)] / row_sum;
                }
            }
        }

        let mut mass = vec![0.0; k];
        let mut sums = vec![DVector::zeros(d); k];
        for (seq, gamma) in self.train.iter().zip(gammas) {
            for s in 0..k {
                let g = gamma.column(s);
                mass[s] += g.sum();
                sums[s].gemv_tr(1.0, seq, &g, 1.0);
            }
        }
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        empty.clear();
        for s in 0..k {
            if mass[s] < EMPTY_STATE_MASS {
                empty.push(s);
                let pick = rng.random_range(0..self.pooled.nrows());
                means.push(self.pooled.row(pick).transpose());
                covs.push(with_jitter(self.pooled_cov.clone(), self.config.jitter));
                continue;
            }
            let mean = &sums[s] / mass[s];
            let mut scatter = DMatrix::zeros(d, d);
            let mut diff = vec![0.0; d];
            for (seq, gamma) in self.train.iter().zip(gammas) {
                let (t_len, x) = (seq.nrows(), seq.as_slice());
                for (t, &g) in gamma.column(s).iter().enumerate() {
                    for i in 0..d {
                        diff[i] = x[i * t_len + t] - mean[i];
                    }
                    for j in 0..d {
                        let gj = g * diff[j];
                        for i in j..d {
                            scatter[(i, j)] += diff[i] * gj;
                        }
                    }
                }
            }
            scatter.fill_upper_triangle_with_lower_triangle();
            let cov = scatter / mass[s];
            covs.push(with_jitter(cov, self.config.jitter));
            means.push(mean);
        }
        if !empty.is_empty() {
            // let reset states be entered again
            let bump = 1.0 / k as f64;
            for &s in empty.iter() {
                initial[s] += bump;
                for i in 0..k {
                    transition[(i, s)] += bump;
                }
            }
            initial /= initial.sum();
            for i in 0..k {
                let row_sum: f64 = transition.row(i).sum();
                for j in 0..k {
                    transition[(i, j)] /= row_sum;
                }
            }
        }
        GaussianHmm::new(initial, transition, means, covs)
            .map_err(|e| Error::Numerical(format!("M-step produced an invalid model: {e}")))
    }

    fn run(&self, restart: usize) -> Result<(GaussianHmm, FitReport)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed);
        rng.set_stream(restart as u64);
        let mut model = self.initial_model(&mut rng)?;
        let (mut ll, mut gammas, mut xi, mut first) = self.e_step(&model);
        let mut report = FitReport {
            log_likelihoods: vec![ll],
            converged: false,
            iterations: 0,
            restart,
            rng_seed: self.config.rng_seed,
            reinitialized: Vec::new(),
        };
        let mut empty = Vec::new();
        for iter in 1..=self.config.max_iters {
            let next = self.m_step(&model, &gammas, &xi, &first, &mut rng, &mut empty)?;
            let (next_ll, g, x, f) = self.e_step(&next);
            if !next_ll.is_finite() {
                return Err(Error::Numerical(format!(
                    "train log-likelihood became {next_ll} at iteration {iter}"
                )));
            }
            report.iterations = iter;
            report.log_likelihoods.push(next_ll);
            for &state in &empty {
                report.reinitialized.push(Reinitialization { iteration: iter, state });
            }
            model = next;
            let improvement = next_ll - ll;
            ll = next_ll;
            (gammas, xi, first) = (g, x, f);
            if empty.is_empty() && improvement < self.config.tol {
                report.converged = true;
                break;
            }
        }
        Ok((model, report))
    }
}

/// Fits a `k`-state Gaussian HMM to `train` with EM, keeping the restart with
/// the highest final train log-likelihood.
pub fn baum_welch(
    train: &[DMatrix<f64>],
    k: usize,
    config: &FitConfig,
) -> Result<(GaussianHmm, FitReport)> {
    let mut best: Option<(GaussianHmm, FitReport)> = None;
    for (m, r) in baum_welch_restarts(train, k, config)? {
        if best
            .as_ref()
            .is_none_or(|(_, b)| r.final_log_likelihood() > b.final_log_likelihood())
        {
            best = Some((m, r));
        }
    }
    Ok(best.expect("at least one restart succeeded"))
}

/// Every restart that finished, in restart order. Fails only when all of them did.
pub fn baum_welch_restarts(
    train: &[DMatrix<f64>],
    k: usize,
    config: &FitConfig,
) -> Result<Vec<(GaussianHmm, FitReport)>> {
    if train.is_empty() {
        return Err(Error::invalid("Baum-Welch needs at least one sequence"));
    }
    if k == 0 {
        return Err(Error::invalid("number of states must be positive"));
    }
    if config.restarts == 0 {
        return Err(Error::invalid("restarts must be positive"));
    }
    if !(config.jitter >= 0.0 && config.tol >= 0.0) {
        return Err(Error::invalid("jitter and tol must be non-negative"));
    }
    let d = train[0].ncols();
    if d == 0 || train.iter().any(|s| s.ncols() != d || s.nrows() == 0) {
        return Err(Error::invalid("sequences must be non-empty with a common feature count"));
    }
    for seq in train {
        check_finite(seq)?;
    }
    let total: usize = train.iter().map(|s| s.nrows()).sum();
    if total <= k {
        return Err(Error::invalid(format!(
            "{total} timesteps cannot support {k} states"
        )));
    }
    let pooled = pooled(train);
    let pooled_cov = population_covariance(&pooled);
    let ws = Workspace {
        train,
        pooled,
        pooled_cov,
        k,
        config: *config,
    };
    let fits: Vec<Result<(GaussianHmm, FitReport)>> =
        (0..config.restarts).into_par_iter().map(|r| ws.run(r)).collect();
    let mut ok = Vec::with_capacity(fits.len());
    let mut last_err = None;
    for fit in fits {
        match fit {
            Ok(f) => ok.push(f),
            Err(e) => last_err = Some(e),
        }
    }
    match last_err {
        Some(e) if ok.is_empty() => Err(e),
        _ => Ok(ok),
    }
}
