//! Choosing the number of hidden states by BIC on held-out trajectories.

use std::io::Write;
use std::ops::RangeInclusive;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::fit::{baum_welch_restarts, FitConfig, FitReport};
use super::inference::log_likelihood;
use super::kmeans::{kmeans, spherical_log_likelihood, spherical_n_params, KMeansFit};
use super::model::GaussianHmm;
use crate::error::{Error, Result};
use crate::table::format_float;
use crate::trajectory::NormalizedTrajectory;

pub const MIN_TRAJECTORIES: usize = 5;
pub const DEFAULT_VAL_FRAC: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InformationCriteria {
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_obs: usize,
}

impl InformationCriteria {
    pub fn from_parts(loglik: f64, n_params: usize, n_obs: usize) -> Self {
        let p = n_params as f64;
        InformationCriteria {
            loglik,
            aic: 2.0 * p - 2.0 * loglik,
            bic: p * (n_obs as f64).ln() - 2.0 * loglik,
            n_params,
            n_obs,
        }
    }
}

/// Log-likelihood, AIC and BIC of `model` on `seqs`; `n_obs` counts timesteps.
pub fn information_criteria(model: &GaussianHmm, seqs: &[DMatrix<f64>]) -> Result<InformationCriteria> {
    if seqs.is_empty() {
        return Err(Error::invalid("no sequences to score"));
    }
    let mut ll = 0.0;
    for seq in seqs {
        ll += log_likelihood(model, seq)?;
    }
    let n_obs = seqs.iter().map(|s| s.nrows()).sum();
    Ok(InformationCriteria::from_parts(ll, model.n_params(), n_obs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub k: usize,
    pub train_loglik: f64,
    /// Absent for baselines scored on the data they were fit to.
    pub val_loglik: Option<f64>,
    pub aic: f64,
    pub bic: f64,
    pub n_params: usize,
    /// Largest per-iteration log-likelihood drop over all EM restarts at this K.
    /// Absent for baselines.
    pub max_ll_decrease: Option<f64>,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionTable {
    pub rows: Vec<SelectionRow>,
}

impl SelectionTable {
    /// Marks the minimum-BIC row (lowest K on ties) as chosen and returns its index.
    fn choose(&mut self) -> usize {
        let mut best = 0;
        for (i, row) in self.rows.iter().enumerate() {
            if row.bic < self.rows[best].bic {
                best = i;
            }
        }
        for (i, row) in self.rows.iter_mut().enumerate() {
            row.chosen = i == best;
        }
        best
    }

    pub fn chosen(&self) -> Option<&SelectionRow> {
        self.rows.iter().find(|r| r.chosen)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut out = String::from("k,train_loglik,val_loglik,aic,bic,n_params,max_ll_decrease,chosen\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.k,
                format_float(r.train_loglik),
                r.val_loglik.map(format_float).unwrap_or_default(),
                format_float(r.aic),
                format_float(r.bic),
                r.n_params,
                r.max_ll_decrease.map(format_float).unwrap_or_default(),
                r.chosen
            ));
        }
        w.write_all(out.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub val_frac: f64,
    pub split_seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            val_frac: DEFAULT_VAL_FRAC,
            split_seed: 0,
        }
    }
}

/// Shuffled train/validation partition of `n` trajectory indices.
pub fn split_indices(n: usize, split: &SplitConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(split.val_frac > 0.0 && split.val_frac < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction {} must lie in (0, 1)",
            split.val_frac
        )));
    }
    if n < MIN_TRAJECTORIES {
        return Err(Error::invalid(format!(
            "model selection needs at least {MIN_TRAJECTORIES} trajectories, got {n}"
        )));
    }
    let n_val = ((split.val_frac * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(split.split_seed));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub model: GaussianHmm,
    pub report: FitReport,
    pub table: SelectionTable,
    pub train_seeds: Vec<i64>,
    pub val_seeds: Vec<i64>,
}

fn check_k_range(k_range: &RangeInclusive<usize>) -> Result<()> {
    if k_range.is_empty() || *k_range.start() == 0 {
        return Err(Error::invalid(format!(
            "state range {}..={} must be nonempty and start at 1 or more",
            k_range.start(),
            k_range.end()
        )));
    }
    Ok(())
}

fn feature_names(trajs: &[NormalizedTrajectory]) -> Result<Vec<String>> {
    let names = trajs
        .first()
        .map(|t| t.feature_names.clone())
        .ok_or_else(|| Error::invalid("no trajectories"))?;
    if trajs.iter().any(|t| t.feature_names != names) {
        return Err(Error::invalid("trajectories disagree on feature columns"));
    }
    Ok(names)
}

/// K, best restart, its report, validation criteria and the worst likelihood drop.
type FitAtK = (usize, GaussianHmm, FitReport, InformationCriteria, f64);

/// Fits every K in `k_range` on the training split and keeps the model with the
/// lowest BIC on the validation split. The returned model is the train-split fit.
pub fn select_model(
    trajs: &[NormalizedTrajectory],
    k_range: RangeInclusive<usize>,
    config: &FitConfig,
    split: &SplitConfig,
) -> Result<Selection> {
    check_k_range(&k_range)?;
    let names = feature_names(trajs)?;
    let (train_idx, val_idx) = split_indices(trajs.len(), split)?;
    let train: Vec<DMatrix<f64>> = train_idx.iter().map(|&i| trajs[i].observations.clone()).collect();
    let val: Vec<DMatrix<f64>> = val_idx.iter().map(|&i| trajs[i].observations.clone()).collect();

    let fits: Vec<Result<FitAtK>> = k_range
        .clone()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|k| {
            let restarts = baum_welch_restarts(&train, k, config)?;
            let decrease = restarts.iter().map(|(_, r)| r.max_decrease()).fold(0.0, f64::max);
            let (model, report) = restarts
                .into_iter()
                .reduce(|a, b| if b.1.final_log_likelihood() > a.1.final_log_likelihood() { b } else { a })
                .expect("at least one restart succeeded");
            let ic = information_criteria(&model, &val)?;
            Ok((k, model, report, ic, decrease))
        })
        .collect();

    let mut table = SelectionTable::default();
    let mut models = Vec::new();
    for fit in fits {
        let (k, model, report, ic, decrease) = fit?;
        table.rows.push(SelectionRow {
            k,
            train_loglik: report.final_log_likelihood(),
            val_loglik: Some(ic.loglik),
            aic: ic.aic,
            bic: ic.bic,
            n_params: ic.n_params,
            max_ll_decrease: Some(decrease),
            chosen: false,
        });
        models.push((model, report));
    }
    let best = table.choose();
    let (mut model, report) = models.swap_remove(best);
    model.set_feature_names(names)?;
    Ok(Selection {
        model,
        report,
        table,
        train_seeds: train_idx.iter().map(|&i| trajs[i].seed).collect(),
        val_seeds: val_idx.iter().map(|&i| trajs[i].seed).collect(),
    })
}

#[derive(Debug, Clone)]
pub struct KMeansBaseline {
    /// Labels of the chosen K, one vector per trajectory.
    pub labels: Vec<Vec<usize>>,
    pub fit: KMeansFit,
    pub table: SelectionTable,
}

/// k-means over all pooled observations (temporal order ignored), scored by
/// BIC under a shared-variance spherical Gaussian mixture.
pub fn kmeans_baseline(
    trajs: &[NormalizedTrajectory],
    k_range: RangeInclusive<usize>,
    rng_seed: u64,
) -> Result<KMeansBaseline> {
    check_k_range(&k_range)?;
    feature_names(trajs)?;
    let d = trajs[0].observations.ncols();
    let n: usize = trajs.iter().map(|t| t.len()).sum();
    if n == 0 {
        return Err(Error::invalid("no observations"));
    }
    let mut pooled = DMatrix::zeros(n, d);
    let mut r = 0;
    for t in trajs {
        pooled.view_mut((r, 0), t.observations.shape()).copy_from(&t.observations);
        r += t.len();
    }
    let fits: Vec<Result<(usize, KMeansFit)>> = k_range
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(k as u64);
            Ok((k, kmeans(&pooled, k, &mut rng)?))
        })
        .collect();
    let mut table = SelectionTable::default();
    let mut kept = Vec::new();
    for fit in fits {
        let (k, fit) = fit?;
        let ll = spherical_log_likelihood(&fit, n, d);
        let ic = InformationCriteria::from_parts(ll, spherical_n_params(k, d), n);
        table.rows.push(SelectionRow {
            k,
            train_loglik: ll,
            val_loglik: None,
            aic: ic.aic,
            bic: ic.bic,
            n_params: ic.n_params,
            max_ll_decrease: None,
            chosen: false,
        });
        kept.push(fit);
    }
    let best = table.choose();
    let fit = kept.swap_remove(best);
    let mut labels = Vec::with_capacity(trajs.len());
    let mut r = 0;
    for t in trajs {
        labels.push(fit.labels[r..r + t.len()].to_vec());
        r += t.len();
    }
    Ok(KMeansBaseline { labels, fit, table })
}
