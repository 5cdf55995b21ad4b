//! Training maps: the pruned state graph of a fitted HMM with edges annotated
//! by the features that most influence the posterior of the destination state.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ghmm::{forward_filter, GaussianHmm};
use crate::metrics::display_name;

pub const TOP_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateNode {
    pub id: usize,
    /// Timesteps assigned to this state across all decoded paths.
    pub occupancy: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEdge {
    pub from: usize,
    pub to: usize,
    /// Model transition probability, or 0 when no decoded path uses the edge.
    pub transition_prob: f64,
    pub observed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureChange {
    pub feature: String,
    /// `μ_to − μ_from` in z-score units.
    pub delta: f64,
    pub importance: f64,
}

impl FeatureChange {
    /// Compact label such as `L2 ↓0.59`.
    pub fn label(&self) -> String {
        let arrow = if self.delta < 0.0 { '↓' } else { '↑' };
        format!("{} {}{:.2}", display_name(&self.feature), arrow, self.delta.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionFrequency {
    pub runs: usize,
    pub total: usize,
}

impl std::fmt::Display for TransitionFrequency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.runs, self.total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n_runs: usize,
}

impl ConvergenceSummary {
    pub fn from_steps(steps: &[f64]) -> Option<Self> {
        if steps.is_empty() {
            return None;
        }
        let n = steps.len() as f64;
        let mean = steps.iter().sum::<f64>() / n;
        let var = steps.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        Some(ConvergenceSummary {
            mean,
            std: var.sqrt(),
            n_runs: steps.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeAnnotation {
    pub from: usize,
    pub to: usize,
    pub top_features: Vec<FeatureChange>,
    pub transition_frequency: TransitionFrequency,
    pub mean_convergence: Option<ConvergenceSummary>,
    /// State changes averaged into the importance scores.
    pub occurrences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMap {
    pub format_version: u32,
    pub n_runs: usize,
    pub states: Vec<StateNode>,
    pub edges: Vec<MapEdge>,
    pub annotations: Vec<EdgeAnnotation>,
}

impl TrainingMap {
    pub fn edge(&self, from: usize, to: usize) -> Option<&MapEdge> {
        self.edges.iter().find(|e| e.from == from && e.to == to)
    }

    pub fn annotation(&self, from: usize, to: usize) -> Option<&EdgeAnnotation> {
        self.annotations.iter().find(|a| a.from == from && a.to == to)
    }

    pub fn observed_edges(&self) -> impl Iterator<Item = &MapEdge> {
        self.edges.iter().filter(|e| e.observed)
    }

    /// True when some state has more than one observed outgoing non-self edge.
    pub fn is_forked(&self) -> bool {
        self.states.iter().any(|s| {
            self.observed_edges()
                .filter(|e| e.from == s.id && e.to != s.id)
                .count()
                > 1
        })
    }
}

/// Signed gradient of `log p(s_t = k | z_{1:t})` with respect to `z_t`, given
/// the filtered posterior at `t`:
/// `Σ_k⁻¹(μ_k − z) − Σ_h p(s_t = h | z_{1:t}) Σ_h⁻¹(μ_h − z)`.
pub fn log_posterior_gradient(
    model: &GaussianHmm,
    filtered: &[f64],
    obs: &[f64],
    k: usize,
) -> Result<Vec<f64>> {
    let (n_states, d) = (model.n_states(), model.n_features());
    if k >= n_states {
        return Err(Error::invalid(format!("state {k} out of range for {n_states} states")));
    }
    if filtered.len() != n_states || obs.len() != d {
        return Err(Error::invalid("posterior or observation has the wrong length"));
    }
    if let Some(feature) = obs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObservation { t: 0, feature });
    }
    let total: f64 = filtered.iter().sum();
    if filtered.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("filtered posterior is not a distribution"));
    }
    let z = DVector::from_column_slice(obs);
    let score = |h: usize| model.precision_times(h, &(&model.means()[h] - &z));
    let mut grad = score(k);
    for (h, &p) in filtered.iter().enumerate() {
        if p > 0.0 {
            grad.axpy(-p, &score(h), 1.0);
        }
    }
    Ok(grad.iter().copied().collect())
}

/// Elementwise absolute value of [`log_posterior_gradient`].
pub fn posterior_gradient(
    model: &GaussianHmm,
    filtered: &[f64],
    obs: &[f64],
    k: usize,
) -> Result<Vec<f64>> {
    Ok(log_posterior_gradient(model, filtered, obs, k)?
        .into_iter()
        .map(f64::abs)
        .collect())
}

fn check_paths(k: usize, paths: &[&[usize]]) -> Result<()> {
    for (r, path) in paths.iter().enumerate() {
        if let Some(&s) = path.iter().find(|&&s| s >= k) {
            return Err(Error::invalid(format!(
                "path {r} contains state {s}, model has {k} states"
            )));
        }
    }
    Ok(())
}

/// Keeps an edge iff some decoded path takes it; unused edges get weight 0.
pub fn prune_transitions(model: &GaussianHmm, paths: &[&[usize]]) -> Result<TrainingMap> {
    let k = model.n_states();
    check_paths(k, paths)?;
    let mut used = vec![false; k * k];
    let mut occupancy = vec![0usize; k];
    for path in paths {
        for &s in path.iter() {
            occupancy[s] += 1;
        }
        for w in path.windows(2) {
            used[w[0] * k + w[1]] = true;
        }
    }
    let states = (0..k).map(|id| StateNode { id, occupancy: occupancy[id] }).collect();
    let mut edges = Vec::with_capacity(k * k);
    for from in 0..k {
        for to in 0..k {
            let observed = used[from * k + to];
            edges.push(MapEdge {
                from,
                to,
                transition_prob: if observed { model.transition()[(from, to)] } else { 0.0 },
                observed,
            });
        }
    }
    Ok(TrainingMap {
        format_version: 1,
        n_runs: paths.len(),
        states,
        edges,
        annotations: Vec::new(),
    })
}

/// One decoded training run.
#[derive(Debug, Clone, Copy)]
pub struct DecodedRun<'a> {
    /// Normalized `T × d` observations.
    pub observations: &'a DMatrix<f64>,
    pub path: &'a [usize],
    pub convergence: Option<u64>,
}

struct EdgeAccumulator {
    importance_sum: Vec<f64>,
    occurrences: usize,
    runs: BTreeSet<usize>,
}

fn accumulate(model: &GaussianHmm, runs: &[DecodedRun<'_>]) -> Result<Vec<Option<EdgeAccumulator>>> {
    let (k, d) = (model.n_states(), model.n_features());
    let paths: Vec<&[usize]> = runs.iter().map(|r| r.path).collect();
    check_paths(k, &paths)?;
    let mut acc: Vec<Option<EdgeAccumulator>> = (0..k * k).map(|_| None).collect();
    for (r, run) in runs.iter().enumerate() {
        if run.path.len() != run.observations.nrows() {
            return Err(Error::invalid(format!(
                "run {r}: path has {} states for {} observations",
                run.path.len(),
                run.observations.nrows()
            )));
        }
        let filtered = forward_filter(model, run.observations)?;
        for t in 1..run.path.len() {
            let (from, to) = (run.path[t - 1], run.path[t]);
            if from == to {
                continue;
            }
            let post: Vec<f64> = filtered.posteriors.row(t).iter().copied().collect();
            let obs: Vec<f64> = run.observations.row(t).iter().copied().collect();
            let imp = posterior_gradient(model, &post, &obs, to)?;
            let slot = acc[from * k + to].get_or_insert_with(|| EdgeAccumulator {
                importance_sum: vec![0.0; d],
                occurrences: 0,
                runs: BTreeSet::new(),
            });
            for (s, v) in slot.importance_sum.iter_mut().zip(imp) {
                *s += v;
            }
            slot.occurrences += 1;
            slot.runs.insert(r);
        }
    }
    Ok(acc)
}

fn annotation_from(
    model: &GaussianHmm,
    runs: &[DecodedRun<'_>],
    from: usize,
    to: usize,
    acc: &EdgeAccumulator,
) -> EdgeAnnotation {
    let n = acc.occurrences as f64;
    let importance: Vec<f64> = acc.importance_sum.iter().map(|s| s / n).collect();
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    let top_features = order
        .iter()
        .take(TOP_FEATURES)
        .map(|&i| FeatureChange {
            feature: model.feature_names()[i].clone(),
            delta: model.means()[to][i] - model.means()[from][i],
            importance: importance[i],
        })
        .collect();
    let steps: Vec<f64> = acc
        .runs
        .iter()
        .filter_map(|&r| runs[r].convergence.map(|c| c as f64))
        .collect();
    EdgeAnnotation {
        from,
        to,
        top_features,
        transition_frequency: TransitionFrequency {
            runs: acc.runs.len(),
            total: runs.len(),
        },
        mean_convergence: ConvergenceSummary::from_steps(&steps),
        occurrences: acc.occurrences,
    }
}

/// Annotation for a single state change `from → to`.
pub fn annotate_edge(
    model: &GaussianHmm,
    runs: &[DecodedRun<'_>],
    from: usize,
    to: usize,
) -> Result<EdgeAnnotation> {
    let k = model.n_states();
    if from >= k || to >= k || from == to {
        return Err(Error::invalid(format!("({from}, {to}) is not a state change of a {k}-state model")));
    }
    let acc = accumulate(model, runs)?;
    match &acc[from * k + to] {
        Some(a) => Ok(annotation_from(model, runs, from, to, a)),
        None => Err(Error::invalid(format!("edge {from} → {to} never occurs in the decoded runs"))),
    }
}

/// Builds the pruned map and annotates every observed state change.
pub fn annotate_edges(model: &GaussianHmm, runs: &[DecodedRun<'_>]) -> Result<TrainingMap> {
    let paths: Vec<&[usize]> = runs.iter().map(|r| r.path).collect();
    let mut map = prune_transitions(model, &paths)?;
    let k = model.n_states();
    let acc = accumulate(model, runs)?;
    for from in 0..k {
        for to in 0..k {
            if let Some(a) = &acc[from * k + to] {
                map.annotations.push(annotation_from(model, runs, from, to, a));
            }
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Dot,
    Json,
}

pub fn export_map(map: &TrainingMap, format: MapFormat) -> Result<String> {
    match format {
        MapFormat::Dot => Ok(to_dot(map)),
        MapFormat::Json => {
            let mut s = serde_json::to_string_pretty(map)?;
            s.push('\n');
            Ok(s)
        }
    }
}

pub fn map_from_json(text: &str) -> Result<TrainingMap> {
    Ok(serde_json::from_str(text)?)
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn to_dot(map: &TrainingMap) -> String {
    let mut out = String::new();
    out.push_str("digraph training_map {\n");
    out.push_str("  rankdir=LR;\n");
    out.push_str("  node [shape=circle];\n");
    let mut states: Vec<&StateNode> = map.states.iter().collect();
    states.sort_by_key(|s| s.id);
    for s in &states {
        let _ = writeln!(out, "  {} [label=\"{}\\nn={}\"];", s.id, s.id, s.occupancy);
    }
    let mut edges: Vec<&MapEdge> = map.observed_edges().collect();
    edges.sort_by_key(|e| (e.from, e.to));
    for e in edges {
        match map.annotation(e.from, e.to) {
            Some(a) if e.from != e.to => {
                let features: Vec<String> = a.top_features.iter().map(FeatureChange::label).collect();
                let mut label = dot_escape(&format!("{} | {}", features.join(", "), a.transition_frequency));
                if let Some(c) = a.mean_convergence {
                    let _ = write!(label, "\\nconv {:.1} ± {:.1}", c.mean, c.std);
                }
                let _ = writeln!(out, "  {} -> {} [label=\"{}\"];", e.from, e.to, label);
            }
            _ => {
                let _ = writeln!(out, "  {} -> {};", e.from, e.to);
            }
        }
    }
    out.push_str("}\n");
    out
}
