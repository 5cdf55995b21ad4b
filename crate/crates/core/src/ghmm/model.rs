use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

/// Cached factorization of one state's emission covariance.
#[derive(Debug, Clone)]
struct EmissionFactor {
    chol: Cholesky<f64, Dyn>,
    /// Row-major lower factor.
    lower: Vec<f64>,
    /// `-½ (d ln 2π + ln |Σ|)`
    log_norm: f64,
}

impl EmissionFactor {
    fn new(cov: &DMatrix<f64>) -> Option<Self> {
        let chol = Cholesky::new(cov.clone())?;
        let lower = chol.l();
        let d = cov.nrows() as f64;
        let log_det = 2.0 * lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return None;
        }
        Some(EmissionFactor {
            chol,
            lower: lower.transpose().as_slice().to_vec(),
            log_norm: -0.5 * (d * (2.0 * PI).ln() + log_det),
        })
    }

    /// Log density given `diff = x - μ`, which is overwritten with `L⁻¹ diff`.
    fn log_density(&self, diff: &mut [f64]) -> f64 {
        let d = diff.len();
        let mut sq = 0.0;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i + 1];
            let mut acc = diff[i];
            for j in 0..i {
                acc -= row[j] * diff[j];
            }
            diff[i] = acc / row[i];
            sq += diff[i] * diff[i];
        }
        self.log_norm - 0.5 * sq
    }
}

/// Hidden Markov model with full-covariance Gaussian emissions.
#[derive(Debug, Clone)]
pub struct GaussianHmm {
    initial: DVector<f64>,
    transition: DMatrix<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    feature_names: Vec<String>,
    factors: Vec<EmissionFactor>,
}

impl PartialEq for GaussianHmm {
    fn eq(&self, other: &Self) -> bool {
        self.initial == other.initial
            && self.transition == other.transition
            && self.means == other.means
            && self.covariances == other.covariances
            && self.feature_names == other.feature_names
    }
}

impl GaussianHmm {
    pub fn new(
        initial: DVector<f64>,
        transition: DMatrix<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let d = means.first().map_or(0, |m| m.len());
        let names = (0..d).map(|i| format!("x{i}")).collect();
        Self::with_names(initial, transition, means, covariances, names)
    }

    pub fn with_names(
        initial: DVector<f64>,
        transition: DMatrix<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        let k = initial.len();
        if k == 0 {
            return bad("model needs at least one state".into());
        }
        let d = feature_names.len();
        if d == 0 {
            return bad("model needs at least one feature".into());
        }
        if transition.shape() != (k, k) {
            return bad(format!("transition is {:?}, expected ({k}, {k})", transition.shape()));
        }
        if means.len() != k || covariances.len() != k {
            return bad(format!(
                "{} means and {} covariances for {k} states",
                means.len(),
                covariances.len()
            ));
        }
        check_simplex(initial.iter(), "initial distribution")?;
        for (j, row) in transition.row_iter().enumerate() {
            check_simplex(row.iter(), &format!("transition row {j}"))?;
        }
        let mut factors = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        for (s, (mean, cov)) in means.iter().zip(&covariances).enumerate() {
            if mean.len() != d || cov.shape() != (d, d) {
                return bad(format!("state {s}: emission dimensions do not match {d} features"));
            }
            if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
                return bad(format!("state {s}: non-finite emission parameter"));
            }
            let scale = cov.amax().max(f64::MIN_POSITIVE);
            if (cov - cov.transpose()).amax() > 1e-9 * scale {
                return bad(format!("state {s}: covariance is not symmetric"));
            }
            let sym = (cov + cov.transpose()) * 0.5;
            let factor = EmissionFactor::new(&sym)
                .ok_or_else(|| Error::InvalidModel(format!("state {s}: covariance is not positive definite")))?;
            factors.push(factor);
            covs.push(sym);
        }
        Ok(GaussianHmm {
            initial,
            transition,
            means,
            covariances: covs,
            feature_names,
            factors,
        })
    }

    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.initial
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn set_feature_names(&mut self, names: Vec<String>) -> Result<()> {
        if names.len() != self.n_features() {
            return Err(Error::InvalidModel(format!(
                "{} feature names for {} features",
                names.len(),
                self.n_features()
            )));
        }
        self.feature_names = names;
        Ok(())
    }

    /// Number of free parameters: initial, transition rows, means, covariances.
    pub fn n_params(&self) -> usize {
        n_params(self.n_states(), self.n_features())
    }

    /// `log N(obs; μ_k, Σ_k)` for every state.
    pub fn log_emission(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.n_features() {
            return Err(Error::invalid(format!(
                "observation has {} features, model has {}",
                obs.len(),
                self.n_features()
            )));
        }
        if let Some(feature) = obs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteObservation { t: 0, feature });
        }
        let mut out = vec![0.0; self.n_states()];
        self.log_emission_into(obs.iter().copied(), &mut out);
        Ok(out)
    }

    pub(crate) fn log_emission_into(&self, obs: impl Iterator<Item = f64> + Clone, out: &mut [f64]) {
        let mut diff = vec![0.0; self.n_features()];
        for (k, factor) in self.factors.iter().enumerate() {
            for (slot, (x, m)) in diff.iter_mut().zip(obs.clone().zip(self.means[k].iter())) {
                *slot = x - m;
            }
            out[k] = factor.log_density(&mut diff);
        }
    }

    /// `T × K` log emission densities for a `T × d` sequence.
    pub(crate) fn log_emissions(&self, seq: &DMatrix<f64>) -> DMatrix<f64> {
        let (t_len, k, d) = (seq.nrows(), self.n_states(), self.n_features());
        let mut out = DMatrix::zeros(t_len, k);
        let x = seq.as_slice();
        let mut diff = vec![0.0; d];
        for (s, factor) in self.factors.iter().enumerate() {
            let mean = self.means[s].as_slice();
            let col = &mut out.as_mut_slice()[s * t_len..(s + 1) * t_len];
            for (t, slot) in col.iter_mut().enumerate() {
                for i in 0..d {
                    diff[i] = x[i * t_len + t] - mean[i];
                }
                *slot = factor.log_density(&mut diff);
            }
        }
        out
    }

    /// `Σ_k⁻¹ v` via the cached factorization.
    pub(crate) fn precision_times(&self, k: usize, v: &DVector<f64>) -> DVector<f64> {
        self.factors[k].chol.solve(v)
    }

    /// Relabels states so that new state `i` is old state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let k = self.n_states();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..k).collect::<Vec<_>>() {
            return Err(Error::invalid(format!("{perm:?} is not a permutation of 0..{k}")));
        }
        Self::with_names(
            DVector::from_fn(k, |i, _| self.initial[perm[i]]),
            DMatrix::from_fn(k, k, |i, j| self.transition[(perm[i], perm[j])]),
            perm.iter().map(|&p| self.means[p].clone()).collect(),
            perm.iter().map(|&p| self.covariances[p].clone()).collect(),
            self.feature_names.clone(),
        )
    }

    pub(crate) fn check_sequence(&self, seq: &DMatrix<f64>) -> Result<()> {
        if seq.ncols() != self.n_features() {
            return Err(Error::invalid(format!(
                "sequence has {} features, model has {}",
                seq.ncols(),
                self.n_features()
            )));
        }
        if seq.nrows() == 0 {
            return Err(Error::invalid("empty sequence"));
        }
        check_finite(seq)
    }
}

pub(crate) fn check_finite(seq: &DMatrix<f64>) -> Result<()> {
    let t_len = seq.nrows();
    match seq.iter().position(|v| !v.is_finite()) {
        Some(idx) => Err(Error::NonFiniteObservation {
            t: idx % t_len,
            feature: idx / t_len,
        }),
        None => Ok(()),
    }
}

pub fn n_params(k: usize, d: usize) -> usize {
    (k - 1) + k * (k - 1) + k * d + k * d * (d + 1) / 2
}

fn check_simplex<'a>(values: impl Iterator<Item = &'a f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &v in values {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidModel(format!("{what} has invalid entry {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidModel(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// Fit settings recorded in a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub rng_seed: u64,
    pub restarts: usize,
    pub jitter: f64,
    pub tol: f64,
    pub max_iters: usize,
}

/// JSON model file, format version 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub n_states: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub norm_degenerate_divisor: f64,
    pub fit: Option<FitRecord>,
}

impl ModelFile {
    pub fn from_model(model: &GaussianHmm, fit: Option<FitRecord>) -> Self {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().copied().collect()).collect()
        };
        ModelFile {
            format_version: 1,
            n_states: model.n_states(),
            n_features: model.n_features(),
            feature_names: model.feature_names.clone(),
            initial: model.initial.iter().copied().collect(),
            transition: rows(&model.transition),
            means: model.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: model.covariances.iter().map(rows).collect(),
            norm_degenerate_divisor: 1.0,
            fit,
        }
    }

    pub fn to_model(&self) -> Result<GaussianHmm> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if self.format_version != 1 {
            return bad(format!("unknown format_version {}", self.format_version));
        }
        if self.norm_degenerate_divisor != 1.0 {
            return bad(format!(
                "unsupported norm_degenerate_divisor {}",
                self.norm_degenerate_divisor
            ));
        }
        let (k, d) = (self.n_states, self.n_features);
        if self.feature_names.len() != d {
            return bad(format!("{} feature names for n_features {d}", self.feature_names.len()));
        }
        let matrix = |rows: &[Vec<f64>], r: usize, c: usize, what: &str| -> Result<DMatrix<f64>> {
            if rows.len() != r || rows.iter().any(|row| row.len() != c) {
                return Err(Error::InvalidModel(format!("{what} must be {r}×{c}")));
            }
            Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
        };
        if self.initial.len() != k || self.means.len() != k || self.covariances.len() != k {
            return bad(format!("parameter arrays do not match n_states {k}"));
        }
        let transition = matrix(&self.transition, k, k, "transition")?;
        let means = self
            .means
            .iter()
            .map(|m| {
                if m.len() != d {
                    Err(Error::InvalidModel(format!("mean must have {d} entries")))
                } else {
                    Ok(DVector::from_column_slice(m))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let covariances = self
            .covariances
            .iter()
            .map(|c| matrix(c, d, d, "covariance"))
            .collect::<Result<Vec<_>>>()?;
        GaussianHmm::with_names(
            DVector::from_column_slice(&self.initial),
            transition,
            means,
            covariances,
            self.feature_names.clone(),
        )
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

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn standard(k: usize, d: usize) -> GaussianHmm {
        GaussianHmm::new(
            DVector::from_element(k, 1.0 / k as f64),
            DMatrix::from_element(k, k, 1.0 / k as f64),
            (0..k).map(|s| DVector::from_element(d, s as f64)).collect(),
            vec![DMatrix::identity(d, d); k],
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_at_mode() {
        let m = standard(1, 1);
        let v = m.log_emission(&[0.0]).unwrap();
        assert_relative_eq!(v[0], -0.5 * (2.0 * PI).ln(), max_relative = 1e-15);
        assert_relative_eq!(v[0], -0.918_938_533_204_672_7, max_relative = 1e-15);
    }

    #[test]
    fn identity_covariance_at_each_mean() {
        let m = standard(3, 4);
        for k in 0..3 {
            let v = m.log_emission(&[k as f64; 4]).unwrap();
            assert_relative_eq!(v[k], -2.0 * (2.0 * PI).ln(), max_relative = 1e-14);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let ok_cov = vec![DMatrix::identity(1, 1); 2];
        let means = vec![DVector::zeros(1); 2];
        let bad_row = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.5, 0.5]);
        assert!(GaussianHmm::new(DVector::from_element(2, 0.5), bad_row, means.clone(), ok_cov).is_err());
        let not_pd = vec![DMatrix::from_element(1, 1, -1.0), DMatrix::identity(1, 1)];
        let a = DMatrix::from_element(2, 2, 0.5);
        assert!(GaussianHmm::new(DVector::from_element(2, 0.5), a, means, not_pd).is_err());
        let m = standard(1, 2);
        assert!(matches!(
            m.log_emission(&[0.0, f64::NAN]),
            Err(Error::NonFiniteObservation { feature: 1, .. })
        ));
    }

    #[test]
    fn parameter_count() {
        assert_eq!(n_params(1, 1), 2);
        assert_eq!(n_params(3, 2), 2 + 6 + 6 + 9);
    }

    #[test]
    fn model_file_round_trip() {
        let m = standard(2, 3);
        let file = ModelFile::from_model(&m, None);
        let text = file.to_json().unwrap();
        let back = ModelFile::from_json(&text).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_model().unwrap(), m);
        assert!(text.contains("\"norm_degenerate_divisor\": 1.0"));
    }
}
