//! Relating latent states to training outcomes: convergence time, bag-of-states
//! regression, detour states and trajectory dissimilarity.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};

pub const DEFAULT_GATE: f64 = 0.05;
/// Default convergence threshold (modular addition and sparse parities).
pub const DEFAULT_THRESHOLD: f64 = 0.9;

/// Per-task convergence thresholds on evaluation accuracy.
pub mod thresholds {
    pub const MODULAR_ADDITION: f64 = 0.9;
    pub const SPARSE_PARITIES: f64 = 0.9;
    pub const CIFAR100: f64 = 0.6;
    pub const CIFAR100_DESTABILIZED: f64 = 0.4;
    pub const MNIST: f64 = 0.97;
}

/// First step whose accuracy reaches `threshold`, or `None` if it never does.
pub fn convergence_time(series: &[(u64, f64)], threshold: f64) -> Result<Option<u64>> {
    if series.is_empty() {
        return Err(Error::invalid("empty evaluation series"));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0, 1]")));
    }
    if let Some(&(step, acc)) = series.iter().find(|(_, a)| !(0.0..=1.0).contains(a)) {
        return Err(Error::invalid(format!("accuracy {acc} at step {step} outside [0, 1]")));
    }
    Ok(series
        .iter()
        .filter(|(_, a)| *a >= threshold)
        .map(|(s, _)| *s)
        .min())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDistribution {
    pub seed: i64,
    pub probs: Vec<f64>,
}

/// Empirical distribution of states along a decoded path.
pub fn unigram_features(seed: i64, path: &[usize], k: usize) -> Result<StateDistribution> {
    if path.is_empty() {
        return Err(Error::invalid("empty state path"));
    }
    let mut counts = vec![0usize; k];
    for &s in path {
        if s >= k {
            return Err(Error::invalid(format!("state {s} out of range for {k} states")));
        }
        counts[s] += 1;
    }
    let t = path.len() as f64;
    Ok(StateDistribution {
        seed,
        probs: counts.iter().map(|&c| c as f64 / t).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    /// One coefficient per state, in standardized target units.
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
    pub p_value: f64,
    pub f_statistic: f64,
    pub df_model: usize,
    pub df_resid: usize,
    pub rank: usize,
    pub n_runs: usize,
    pub target_mean: f64,
    pub target_std: f64,
}

impl RegressionResult {
    /// Predicted target in original units.
    pub fn predict(&self, features: &[f64]) -> f64 {
        let z: f64 = features.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum();
        self.target_mean + self.target_std * z
    }
}

/// Least squares without intercept on z-scored targets.
///
/// Rank-deficient designs use the minimum-norm solution. When every feature
/// row sums to one the constant vector lies in the column space, so one
/// degree of freedom of the model plays the role of an intercept and the
/// F-test uses `rank − 1` numerator degrees of freedom; otherwise `rank`.
pub fn fit_regression(features: &DMatrix<f64>, targets: &[f64]) -> Result<RegressionResult> {
    let (n, k) = features.shape();
    if targets.len() != n {
        return Err(Error::invalid(format!("{} targets for {n} feature rows", targets.len())));
    }
    if n <= k {
        return Err(Error::invalid(format!(
            "regression needs more runs than states ({n} runs, {k} states)"
        )));
    }
    if targets.iter().chain(features.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite regression input"));
    }
    let nf = n as f64;
    let mean = targets.iter().sum::<f64>() / nf;
    let std = (targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / nf).sqrt();

    let svd = features.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * (n.max(k) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let simplex_rows = features.row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-9);
    let df_model = if simplex_rows { rank.saturating_sub(1) } else { rank };
    let df_resid = n - rank;

    if std == 0.0 {
        return Ok(RegressionResult {
            coefficients: vec![0.0; k],
            r_squared: 0.0,
            p_value: 1.0,
            f_statistic: 0.0,
            df_model,
            df_resid,
            rank,
            n_runs: n,
            target_mean: mean,
            target_std: 0.0,
        });
    }
    let z = DVector::from_iterator(n, targets.iter().map(|y| (y - mean) / std));
    let beta = svd
        .solve(&z, tol)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))?;
    let resid = &z - features * &beta;
    let ssr = resid.norm_squared();
    // z has mean 0 and population variance 1
    let sst = nf;
    let r_squared = 1.0 - ssr / sst;
    let (f_statistic, p_value) = if df_model == 0 {
        (0.0, 1.0)
    } else if ssr <= f64::EPSILON * sst {
        (f64::INFINITY, 0.0)
    } else {
        let f = ((sst - ssr) / df_model as f64) / (ssr / df_resid as f64);
        let dist = FisherSnedecor::new(df_model as f64, df_resid as f64)
            .map_err(|e| Error::Numerical(format!("F distribution: {e}")))?;
        (f, dist.sf(f).clamp(0.0, 1.0))
    };
    Ok(RegressionResult {
        coefficients: beta.iter().copied().collect(),
        r_squared,
        p_value,
        f_statistic,
        df_model,
        df_resid,
        rank,
        n_runs: n,
        target_mean: mean,
        target_std: std,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDetour {
    pub id: usize,
    pub coefficient: f64,
    pub visited_by: usize,
    pub optional: bool,
    pub detour: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetourReport {
    pub states: Vec<StateDetour>,
    pub significance_gate: f64,
}

impl DetourReport {
    pub fn detour_states(&self) -> Vec<usize> {
        self.states.iter().filter(|s| s.detour).map(|s| s.id).collect()
    }
}

/// A state is a detour when some runs skip it, its coefficient is positive and
/// the regression is significant at `gate`.
pub fn detect_detours(regression: &RegressionResult, paths: &[&[usize]], gate: f64) -> Result<DetourReport> {
    if paths.is_empty() {
        return Err(Error::invalid("no decoded paths"));
    }
    let k = regression.coefficients.len();
    let mut visited_by = vec![0usize; k];
    for path in paths {
        let mut seen = vec![false; k];
        for &s in path.iter() {
            if s >= k {
                return Err(Error::invalid(format!("state {s} out of range for {k} states")));
            }
            seen[s] = true;
        }
        for (v, s) in visited_by.iter_mut().zip(seen) {
            *v += s as usize;
        }
    }
    let significant = regression.p_value < gate;
    let states = (0..k)
        .map(|id| {
            let optional = visited_by[id] > 0 && visited_by[id] < paths.len();
            let coefficient = regression.coefficients[id];
            StateDetour {
                id,
                coefficient,
                visited_by: visited_by[id],
                optional,
                detour: optional && coefficient > 0.0 && significant,
            }
        })
        .collect();
    Ok(DetourReport {
        states,
        significance_gate: gate,
    })
}

/// Wasserstein distance between state distributions under the 0/1 ground
/// metric, i.e. total variation.
pub fn wasserstein_discrete(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `2 / (N (N − 1)) Σ_i Σ_{j ≤ i} W(p_i, p_j)`.
pub fn dissimilarity(distributions: &[StateDistribution]) -> Result<f64> {
    let n = distributions.len();
    if n < 2 {
        return Err(Error::invalid("dissimilarity needs at least two runs"));
    }
    let k = distributions[0].probs.len();
    if distributions.iter().any(|d| d.probs.len() != k) {
        return Err(Error::invalid("state distributions have different lengths"));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..=i {
            total += wasserstein_discrete(&distributions[i].probs, &distributions[j].probs);
        }
    }
    Ok(2.0 * total / (n as f64 * (n as f64 - 1.0)))
}

/// JSON summary written by the regression step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub format_version: u32,
    pub r_squared: f64,
    pub p_value: f64,
    pub n_runs: usize,
    /// Convergence threshold on evaluation accuracy.
    pub threshold: f64,
    pub gate: f64,
    pub target_mean: f64,
    pub target_std: f64,
    pub states: Vec<StateDetour>,
    pub dissimilarity: f64,
}

impl RegressionReport {
    pub fn new(
        regression: &RegressionResult,
        detours: &DetourReport,
        threshold: f64,
        dissimilarity: f64,
    ) -> Self {
        RegressionReport {
            format_version: 1,
            r_squared: regression.r_squared,
            p_value: regression.p_value,
            n_runs: regression.n_runs,
            threshold,
            gate: detours.significance_gate,
            target_mean: regression.target_mean,
            target_std: regression.target_std,
            states: detours.states.clone(),
            dissimilarity,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// `seed,convergence_step` rows.
pub fn write_convergence_csv(rows: &[(i64, u64)], mut w: impl Write) -> std::io::Result<()> {
    let mut out = String::from("seed,convergence_step\n");
    for (seed, step) in rows {
        out.push_str(&format!("{seed},{step}\n"));
    }
    w.write_all(out.as_bytes())
}
