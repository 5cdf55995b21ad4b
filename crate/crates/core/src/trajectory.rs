//! Per-seed metric time series and their z-score normalization.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::table::{MetricRow, MetricsTable};

/// Number of leading checkpoints used to estimate normalization statistics.
pub const DEFAULT_NORM_WINDOW: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: i64,
    pub steps: Vec<u64>,
    pub feature_names: Vec<String>,
    /// `T × d`, one row per checkpoint.
    pub observations: DMatrix<f64>,
    pub eval_accuracy: Vec<Option<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `(step, accuracy)` pairs where accuracy was recorded.
    pub fn eval_series(&self) -> Vec<(u64, f64)> {
        eval_series(&self.steps, &self.eval_accuracy)
    }
}

fn eval_series(steps: &[u64], acc: &[Option<f64>]) -> Vec<(u64, f64)> {
    steps
        .iter()
        .zip(acc)
        .filter_map(|(&s, a)| a.map(|a| (s, a)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub means: Vec<f64>,
    /// Population standard deviations as estimated; may be zero.
    pub stds: Vec<f64>,
    pub window: usize,
}

impl NormStats {
    pub fn is_degenerate(&self, feature: usize) -> bool {
        self.stds[feature] == 0.0
    }

    /// Divisor actually applied to each feature (1 for degenerate features).
    pub fn divisor(&self, feature: usize) -> f64 {
        if self.is_degenerate(feature) {
            1.0
        } else {
            self.stds[feature]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTrajectory {
    pub seed: i64,
    pub steps: Vec<u64>,
    pub feature_names: Vec<String>,
    pub observations: DMatrix<f64>,
    pub eval_accuracy: Vec<Option<f64>>,
    pub stats: NormStats,
}

impl NormalizedTrajectory {
    /// Wraps observations that already live in normalized space, with
    /// identity statistics. Steps are `0..T`.
    pub fn from_normalized(seed: i64, feature_names: Vec<String>, observations: DMatrix<f64>) -> Self {
        let (t, d) = observations.shape();
        NormalizedTrajectory {
            seed,
            steps: (0..t as u64).collect(),
            feature_names,
            observations,
            eval_accuracy: vec![None; t],
            stats: NormStats {
                means: vec![0.0; d],
                stds: vec![1.0; d],
                window: t,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn eval_series(&self) -> Vec<(u64, f64)> {
        eval_series(&self.steps, &self.eval_accuracy)
    }
}

/// Assembles one seed's rows into a trajectory ordered by step.
pub fn build_trajectory(rows: &[MetricRow], feature_names: &[String]) -> Result<Trajectory> {
    let seed = rows.first().map_or(0, |r| r.seed);
    let err = |message: String| Error::Trajectory { seed, message };
    if rows.len() < 2 {
        return Err(err(format!("needs at least 2 checkpoints, found {}", rows.len())));
    }
    if let Some(r) = rows.iter().find(|r| r.seed != seed) {
        return Err(err(format!("row for seed {} mixed into trajectory", r.seed)));
    }
    let d = feature_names.len();
    if let Some(r) = rows.iter().find(|r| r.values.len() != d) {
        return Err(err(format!(
            "step {} has {} values, expected {d}",
            r.step,
            r.values.len()
        )));
    }
    let mut sorted: Vec<&MetricRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.step);
    if let Some(w) = sorted.windows(2).find(|w| w[0].step == w[1].step) {
        return Err(err(format!("duplicate step {}", w[0].step)));
    }
    let t = sorted.len();
    let observations = DMatrix::from_fn(t, d, |i, j| sorted[i].values[j]);
    Ok(Trajectory {
        seed,
        steps: sorted.iter().map(|r| r.step).collect(),
        feature_names: feature_names.to_vec(),
        observations,
        eval_accuracy: sorted.iter().map(|r| r.eval_accuracy).collect(),
    })
}

/// Splits a metrics table into per-seed trajectories, ascending by seed.
pub fn trajectories_from_table(table: &MetricsTable) -> Result<Vec<Trajectory>> {
    let mut groups: BTreeMap<i64, Vec<MetricRow>> = BTreeMap::new();
    for row in &table.rows {
        groups.entry(row.seed).or_default().push(row.clone());
    }
    groups
        .values()
        .map(|rows| build_trajectory(rows, &table.feature_names))
        .collect()
}

/// z-scores each feature using the mean and population standard deviation of
/// the first `min(T, 1000)` checkpoints.
pub fn normalize(traj: &Trajectory) -> Result<NormalizedTrajectory> {
    normalize_with_window(traj, DEFAULT_NORM_WINDOW)
}

pub fn normalize_with_window(traj: &Trajectory, window: usize) -> Result<NormalizedTrajectory> {
    let (t, d) = traj.observations.shape();
    if t < 2 {
        return Err(Error::Trajectory {
            seed: traj.seed,
            message: format!("needs at least 2 checkpoints, found {t}"),
        });
    }
    if window == 0 {
        return Err(Error::invalid("normalization window must be positive"));
    }
    if let Some(idx) = traj.observations.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObservation {
            t: idx % t,
            feature: idx / t,
        });
    }
    let w = t.min(window);
    let mut means = Vec::with_capacity(d);
    let mut stds = Vec::with_capacity(d);
    for j in 0..d {
        let col = traj.observations.view((0, j), (w, 1));
        let mean = col.sum() / w as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
        means.push(mean);
        stds.push(var.sqrt());
    }
    let stats = NormStats {
        means,
        stds,
        window: w,
    };
    let observations =
        DMatrix::from_fn(t, d, |i, j| (traj.observations[(i, j)] - stats.means[j]) / stats.divisor(j));
    Ok(NormalizedTrajectory {
        seed: traj.seed,
        steps: traj.steps.clone(),
        feature_names: traj.feature_names.clone(),
        observations,
        eval_accuracy: traj.eval_accuracy.clone(),
        stats,
    })
}
