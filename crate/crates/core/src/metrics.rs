//! The fourteen per-checkpoint weight statistics.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ingest::WeightSnapshot;

pub const N_METRICS: usize = 14;

/// Canonical column order of the metric vector.
pub const FEATURE_NAMES: [&str; N_METRICS] = [
    "l1",
    "l2",
    "l1_over_l2",
    "mean_w",
    "median_w",
    "var_w",
    "mean_b",
    "median_b",
    "var_b",
    "trace",
    "spectral",
    "trace_over_spectral",
    "mean_sv",
    "var_sv",
];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|&n| n == name)
}

/// Short label used when annotating map edges, e.g. `L2` or `trace/λmax`.
pub fn display_name(name: &str) -> &str {
    match name {
        "l1" => "L1",
        "l2" => "L2",
        "l1_over_l2" => "L1/L2",
        "mean_w" => "μ(w)",
        "median_w" => "median(w)",
        "var_w" => "σ(w)",
        "mean_b" => "μ(b)",
        "median_b" => "median(b)",
        "var_b" => "σ(b)",
        "trace" => "trace",
        "spectral" => "λmax",
        "trace_over_spectral" => "trace/λmax",
        "mean_sv" => "μ(λ)",
        "var_sv" => "σ(λ)",
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricVector {
    pub seed: i64,
    pub step: u64,
    pub eval_accuracy: Option<f64>,
    pub values: [f64; N_METRICS],
}

impl MetricVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.values[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricWarning {
    /// No bias parameters; bias statistics were set to zero.
    NoBiases,
}

/// Singular values of `matrix`, sorted in descending order.
pub fn singular_values(matrix: &DMatrix<f64>) -> Result<Vec<f64>> {
    if let Some(i) = matrix.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "matrix has a non-finite entry at column-major index {i}"
        )));
    }
    if matrix.is_empty() {
        return Ok(Vec::new());
    }
    let mut values: Vec<f64> = matrix.singular_values().iter().map(|v| v.max(0.0)).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Two-pass population variance.
pub(crate) fn population_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Computes the metric values from weight matrices and pooled bias entries.
///
/// `weights` pairs a display name (used in error messages) with each matrix.
pub fn metric_values(
    weights: &[(&str, DMatrix<f64>)],
    biases: &[f64],
) -> Result<([f64; N_METRICS], Vec<MetricWarning>)> {
    if weights.is_empty() {
        return Err(Error::NoWeightMatrices);
    }
    let k = weights.len() as f64;
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut l1_over_l2 = 0.0;
    let mut trace = 0.0;
    let mut spectral = 0.0;
    let mut trace_over_spectral = 0.0;
    let mut pooled_w = Vec::new();
    let mut pooled_sv = Vec::new();

    for (name, w) in weights {
        let sv = singular_values(w)?;
        let sigma_max = sv.first().copied().unwrap_or(0.0);
        if sigma_max == 0.0 {
            return Err(Error::ZeroMatrix {
                name: (*name).to_string(),
            });
        }
        let norm1: f64 = w.iter().map(|v| v.abs()).sum();
        let frob = w.norm();
        let tr: f64 = (0..w.nrows().min(w.ncols())).map(|i| w[(i, i)]).sum();

        l1 += norm1;
        l2 += frob;
        l1_over_l2 += norm1 / frob;
        trace += tr;
        spectral += sigma_max;
        trace_over_spectral += tr / sigma_max;
        pooled_w.extend(w.iter().copied());
        pooled_sv.extend(sv);
    }

    let mean_w = mean(&pooled_w);
    let var_w = population_variance(&pooled_w);
    let median_w = median(&mut pooled_w);

    let mut warnings = Vec::new();
    let (mean_b, median_b, var_b) = if biases.is_empty() {
        warnings.push(MetricWarning::NoBiases);
        (0.0, 0.0, 0.0)
    } else {
        let mut b = biases.to_vec();
        let m = mean(&b);
        let v = population_variance(&b);
        (m, median(&mut b), v)
    };

    let values = [
        l1 / k,
        l2 / k,
        l1_over_l2 / k,
        mean_w,
        median_w,
        var_w,
        mean_b,
        median_b,
        var_b,
        trace / k,
        spectral / k,
        trace_over_spectral / k,
        mean(&pooled_sv),
        population_variance(&pooled_sv),
    ];
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "metric `{}` is not finite",
            FEATURE_NAMES[i]
        )));
    }
    Ok((values, warnings))
}

/// Computes the metric vector of one checkpoint. Excluded tensors are skipped.
pub fn compute_metrics(snapshot: &WeightSnapshot) -> Result<(MetricVector, Vec<MetricWarning>)> {
    let weights: Vec<(&str, DMatrix<f64>)> = snapshot
        .weights()
        .map(|t| {
            let (r, c) = t.matrix_dims().expect("weight tensors are 2-D");
            let m = DMatrix::from_row_iterator(r, c, t.data.iter().map(|&v| v as f64));
            (t.name.as_str(), m)
        })
        .collect();
    let biases: Vec<f64> = snapshot
        .biases()
        .flat_map(|t| t.data.iter().map(|&v| v as f64))
        .collect();
    let (values, warnings) = metric_values(&weights, &biases)?;
    for w in &warnings {
        log::warn!(
            "seed {} step {}: {:?}; bias metrics set to 0",
            snapshot.seed,
            snapshot.step,
            w
        );
    }
    Ok((
        MetricVector {
            seed: snapshot.seed,
            step: snapshot.step,
            eval_accuracy: snapshot.eval_accuracy,
            values,
        },
        warnings,
    ))
}
