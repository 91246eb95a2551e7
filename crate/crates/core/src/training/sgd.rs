use crate::coupled_prng::StreamRng;
use crate::error::{invalid_param, Result};

use super::objective::{LocalDataset, Loss};

/// Mini-batch gradient at `theta`.
pub fn stochastic_gradient(loss: &Loss, data: &LocalDataset, theta: &[f64], batch: &[usize]) -> Result<Vec<f64>> {
    loss.batch_gradient(data, theta, batch)
}

/// Draws `size` distinct row indices (partial Fisher-Yates). Returns all rows
/// in order when `size >= n`.
pub fn sample_batch(n: usize, size: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if size >= n {
        return idx;
    }
    for i in 0..size {
        let j = i + rng.next_below(n - i);
        idx.swap(i, j);
    }
    idx.truncate(size);
    idx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSgdParams {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Abort when `‖θ_q‖₂` exceeds this.
    pub divergence_ceiling: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LocalOutcome {
    Update(Vec<f64>),
    Diverged { step: usize, norm: f64 },
}

/// Runs `Q` local SGD steps from `theta0` and returns
/// `Δ = θ_Q - θ_0 = -η Σ_q g_q`. `theta0` is not modified.
pub fn local_rounds(
    loss: &Loss,
    data: &LocalDataset,
    theta0: &[f64],
    params: &LocalSgdParams,
    rng: &mut StreamRng,
) -> Result<LocalOutcome> {
    if params.steps == 0 {
        return Err(invalid_param("local steps Q must be >= 1"));
    }
    if !(params.learning_rate >= 0.0 && params.learning_rate.is_finite()) {
        return Err(invalid_param(format!("learning rate {}", params.learning_rate)));
    }
    if params.batch_size == 0 {
        return Err(invalid_param("batch size must be >= 1"));
    }
    let mut delta = vec![0.0; theta0.len()];
    let mut theta = theta0.to_vec();
    for q in 0..params.steps {
        let batch = sample_batch(data.len(), params.batch_size, rng);
        let g = loss.batch_gradient(data, &theta, &batch)?;
        for ((d, t), (gi, t0)) in delta.iter_mut().zip(theta.iter_mut()).zip(g.iter().zip(theta0)) {
            *d -= params.learning_rate * gi;
            *t = t0 + *d;
        }
        let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > params.divergence_ceiling {
            return Ok(LocalOutcome::Diverged { step: q, norm });
        }
    }
    Ok(LocalOutcome::Update(delta))
}
