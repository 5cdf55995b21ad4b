use nalgebra::DMatrix;

use super::model::GaussianHmm;
use crate::error::Result;

/// Filtered posteriors `p(s_t | z_{1:t})` (`T × K`) and the sequence log-likelihood.
#[derive(Debug, Clone)]
pub struct Filtered {
    pub posteriors: DMatrix<f64>,
    pub log_likelihood: f64,
}

fn ln_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Normalized forward recursion. Each step's normalizer is formed in the log
/// domain so that extreme emission densities never underflow to a zero row.
pub fn forward_filter(model: &GaussianHmm, seq: &DMatrix<f64>) -> Result<Filtered> {
    model.check_sequence(seq)?;
    let log_b = model.log_emissions(seq);
    let (t_len, k) = (seq.nrows(), model.n_states());
    let a = model.transition();
    let mut post = DMatrix::zeros(t_len, k);
    let mut predicted: Vec<f64> = model.initial().iter().copied().collect();
    let mut joint = vec![0.0; k];
    let mut log_likelihood = 0.0;

    for t in 0..t_len {
        if t > 0 {
            for (j, p) in predicted.iter_mut().enumerate() {
                *p = (0..k).map(|i| post[(t - 1, i)] * a[(i, j)]).sum();
            }
        }
        let mut max = f64::NEG_INFINITY;
        for s in 0..k {
            joint[s] = ln_or_neg_inf(predicted[s]) + log_b[(t, s)];
            max = max.max(joint[s]);
        }
        let mut norm = 0.0;
        for s in 0..k {
            joint[s] = (joint[s] - max).exp();
            norm += joint[s];
        }
        for s in 0..k {
            post[(t, s)] = joint[s] / norm;
        }
        log_likelihood += max + norm.ln();
    }
    Ok(Filtered {
        posteriors: post,
        log_likelihood,
    })
}

pub fn log_likelihood(model: &GaussianHmm, seq: &DMatrix<f64>) -> Result<f64> {
    Ok(forward_filter(model, seq)?.log_likelihood)
}

/// Most probable state path and its joint log probability `log p(s, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub states: Vec<usize>,
    pub log_prob: f64,
}

/// Exact MAP decoding in log space. Ties resolve toward the lowest state index.
pub fn viterbi(model: &GaussianHmm, seq: &DMatrix<f64>) -> Result<ViterbiPath> {
    model.check_sequence(seq)?;
    let log_b = model.log_emissions(seq);
    let (t_len, k) = (seq.nrows(), model.n_states());
    let log_a = model.transition().map(ln_or_neg_inf);
    let mut score: Vec<f64> = (0..k)
        .map(|s| ln_or_neg_inf(model.initial()[s]) + log_b[(0, s)])
        .collect();
    let mut back = vec![0usize; t_len * k];
    let mut next = vec![0.0; k];
    for t in 1..t_len {
        for j in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..k {
                let v = score[i] + log_a[(i, j)];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + log_b[(t, j)];
            back[t * k + j] = arg;
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut last = 0;
    for s in 1..k {
        if score[s] > score[last] {
            last = s;
        }
    }
    let log_prob = score[last];
    let mut states = vec![0; t_len];
    states[t_len - 1] = last;
    for t in (1..t_len).rev() {
        states[t - 1] = back[t * k + states[t]];
    }
    Ok(ViterbiPath { states, log_prob })
}

/// Joint log probability of a given state path and observations.
pub fn path_log_prob(model: &GaussianHmm, seq: &DMatrix<f64>, path: &[usize]) -> Result<f64> {
    model.check_sequence(seq)?;
    let log_b = model.log_emissions(seq);
    let mut lp = ln_or_neg_inf(model.initial()[path[0]]) + log_b[(0, path[0])];
    for t in 1..path.len() {
        lp += ln_or_neg_inf(model.transition()[(path[t - 1], path[t])]) + log_b[(t, path[t])];
    }
    Ok(lp)
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Sufficient statistics of one sequence from the forward-backward pass.
pub(crate) struct Posterior {
    /// Smoothed `p(s_t | z_{1:T})`, `T × K`.
    pub gamma: DMatrix<f64>,
    /// Expected transition counts summed over t, `K × K`.
    pub xi_sum: DMatrix<f64>,
    pub log_likelihood: f64,
}

/// Exact smoothing. Runs the scaled recursion and falls back to the log-space
/// one when a scaling constant underflows.
pub(crate) fn forward_backward(model: &GaussianHmm, seq: &DMatrix<f64>) -> Posterior {
    let log_b = model.log_emissions(seq);
    scaled_forward_backward(model, &log_b).unwrap_or_else(|| log_forward_backward(model, &log_b))
}

/// Normalized α/β recursion on emissions rescaled by their per-step maximum.
/// Buffers are row-major `T × K`.
fn scaled_forward_backward(model: &GaussianHmm, log_b: &DMatrix<f64>) -> Option<Posterior> {
    let (t_len, k) = log_b.shape();
    let a: Vec<f64> = model.transition().transpose().as_slice().to_vec();
    let mut b = vec![0.0; t_len * k];
    let mut log_likelihood = 0.0;
    for t in 0..t_len {
        let max = log_b.row(t).max();
        log_likelihood += max;
        for s in 0..k {
            b[t * k + s] = (log_b[(t, s)] - max).exp();
        }
    }

    let mut alpha = vec![0.0; t_len * k];
    let mut scale = vec![0.0; t_len];
    for t in 0..t_len {
        let (done, rest) = alpha.split_at_mut(t * k);
        let cur = &mut rest[..k];
        if t == 0 {
            cur.copy_from_slice(model.initial().as_slice());
        } else {
            cur.fill(0.0);
            let prev = &done[(t - 1) * k..];
            for i in 0..k {
                let (p, row) = (prev[i], &a[i * k..(i + 1) * k]);
                for j in 0..k {
                    cur[j] += p * row[j];
                }
            }
        }
        let mut c = 0.0;
        for j in 0..k {
            cur[j] *= b[t * k + j];
            c += cur[j];
        }
        if !(c >= f64::MIN_POSITIVE && c.is_finite()) {
            return None;
        }
        for v in cur.iter_mut() {
            *v /= c;
        }
        scale[t] = c;
        log_likelihood += c.ln();
    }

    // weighted[t+1] = b[t+1] ⊙ β[t+1] / c[t+1] serves both β and ξ
    let mut beta = vec![1.0; t_len * k];
    let mut weighted = vec![0.0; k];
    let mut xi = vec![0.0; k * k];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for j in 0..k {
            weighted[j] = b[(t + 1) * k + j] * beta[(t + 1) * k + j] / scale[t + 1];
        }
        for i in 0..k {
            let row = &a[i * k..(i + 1) * k];
            let ai = alpha[t * k + i];
            let mut acc = 0.0;
            for j in 0..k {
                let w = row[j] * weighted[j];
                acc += w;
                xi[i * k + j] += ai * w;
            }
            beta[t * k + i] = acc;
        }
    }

    let mut gamma = DMatrix::zeros(t_len, k);
    for t in 0..t_len {
        let mut total = 0.0;
        for s in 0..k {
            total += alpha[t * k + s] * beta[t * k + s];
        }
        for s in 0..k {
            gamma[(t, s)] = alpha[t * k + s] * beta[t * k + s] / total;
        }
    }
    let xi_sum = DMatrix::from_row_slice(k, k, &xi);
    if gamma.iter().chain(xi_sum.iter()).all(|v| v.is_finite()) {
        Some(Posterior {
            gamma,
            xi_sum,
            log_likelihood,
        })
    } else {
        None
    }
}

fn log_forward_backward(model: &GaussianHmm, log_b: &DMatrix<f64>) -> Posterior {
    let (t_len, k) = log_b.shape();
    let log_a = model.transition().map(ln_or_neg_inf);
    let mut log_alpha = DMatrix::from_element(t_len, k, f64::NEG_INFINITY);
    let mut log_beta = DMatrix::zeros(t_len, k);
    let mut buf = vec![0.0; k];

    for s in 0..k {
        log_alpha[(0, s)] = ln_or_neg_inf(model.initial()[s]) + log_b[(0, s)];
    }
    for t in 1..t_len {
        for j in 0..k {
            for i in 0..k {
                buf[i] = log_alpha[(t - 1, i)] + log_a[(i, j)];
            }
            log_alpha[(t, j)] = log_sum_exp(&buf) + log_b[(t, j)];
        }
    }
    for t in (0..t_len.saturating_sub(1)).rev() {
        for i in 0..k {
            for j in 0..k {
                buf[j] = log_a[(i, j)] + log_b[(t + 1, j)] + log_beta[(t + 1, j)];
            }
            log_beta[(t, i)] = log_sum_exp(&buf);
        }
    }
    let last: Vec<f64> = log_alpha.row(t_len - 1).iter().copied().collect();
    let ll = log_sum_exp(&last);

    let mut gamma = DMatrix::zeros(t_len, k);
    for t in 0..t_len {
        for s in 0..k {
            buf[s] = log_alpha[(t, s)] + log_beta[(t, s)];
        }
        let norm = log_sum_exp(&buf);
        for s in 0..k {
            gamma[(t, s)] = (buf[s] - norm).exp();
        }
    }
    let mut xi_sum = DMatrix::zeros(k, k);
    for t in 0..t_len.saturating_sub(1) {
        for i in 0..k {
            let la = log_alpha[(t, i)];
            if la == f64::NEG_INFINITY {
                continue;
            }
            for j in 0..k {
                let v = la + log_a[(i, j)] + log_b[(t + 1, j)] + log_beta[(t + 1, j)] - ll;
                if v > f64::NEG_INFINITY {
                    xi_sum[(i, j)] += v.exp();
                }
            }
        }
    }
    Posterior {
        gamma,
        xi_sum,
        log_likelihood: ll,
    }
}
