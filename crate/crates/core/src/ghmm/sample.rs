use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::model::GaussianHmm;

/// A sampled sequence with its generating state path.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `T × d`
    pub observations: DMatrix<f64>,
    pub states: Vec<usize>,
}

fn categorical<R: Rng>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

/// Ancestral sampling of one length-`t_len` sequence.
pub fn sample_with<R: Rng>(model: &GaussianHmm, t_len: usize, rng: &mut R) -> Sample {
    let (k, d) = (model.n_states(), model.n_features());
    let lowers: Vec<DMatrix<f64>> = model
        .covariances()
        .iter()
        .map(|c| c.clone().cholesky().expect("validated covariance").l())
        .collect();
    let mut observations = DMatrix::zeros(t_len, d);
    let mut states = Vec::with_capacity(t_len);
    let mut state = 0;
    for t in 0..t_len {
        state = if t == 0 {
            categorical(model.initial().iter().copied(), rng)
        } else {
            categorical((0..k).map(|j| model.transition()[(state, j)]), rng)
        };
        states.push(state);
        let eps = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &model.means()[state] + &lowers[state] * eps;
        observations.row_mut(t).copy_from(&x.transpose());
    }
    Sample {
        observations,
        states,
    }
}

/// Deterministic given `rng_seed`.
pub fn sample(model: &GaussianHmm, t_len: usize, rng_seed: u64) -> Sample {
    sample_with(model, t_len, &mut ChaCha8Rng::seed_from_u64(rng_seed))
}

/// `n` independent sequences; run `i` draws from stream `i` of the seeded generator.
pub fn sample_runs(model: &GaussianHmm, n: usize, t_len: usize, rng_seed: u64) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(i as u64);
            sample_with(model, t_len, &mut rng)
        })
        .collect()
}
