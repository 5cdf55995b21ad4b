//! Training-trajectory analysis with Gaussian hidden Markov models.
//!
//! Checkpoints are reduced to fourteen weight statistics, normalized per
//! training run, and modeled with a Gaussian HMM. The fitted model yields a
//! training map of latent states, and a regression on per-run state
//! frequencies identifies detour states associated with slow convergence.

pub mod error;
pub mod ghmm;
pub mod ingest;
pub mod map;
pub mod metrics;
pub mod semantics;
pub mod table;
pub mod trajectory;

pub use error::{Error, ErrorClass, Result};
