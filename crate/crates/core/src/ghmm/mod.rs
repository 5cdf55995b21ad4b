//! Gaussian hidden Markov models: estimation, decoding, sampling and model selection.

mod fit;
mod inference;
mod kmeans;
mod model;
mod sample;
mod select;

pub use fit::{baum_welch, baum_welch_restarts, FitConfig, FitReport, Reinitialization};
pub use inference::{forward_filter, log_likelihood, path_log_prob, viterbi, Filtered, ViterbiPath};
pub use kmeans::{kmeans, spherical_log_likelihood, spherical_n_params, KMeansFit};
pub use model::{n_params, FitRecord, GaussianHmm, ModelFile};
pub use sample::{sample, sample_runs, sample_with, Sample};
pub use select::{
    information_criteria, kmeans_baseline, select_model, split_indices, InformationCriteria,
    KMeansBaseline, Selection, SelectionRow, SelectionTable, SplitConfig, DEFAULT_VAL_FRAC,
    MIN_TRAJECTORIES,
};
