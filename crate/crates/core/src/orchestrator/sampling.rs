use crate::coupled_prng::StreamRng;
use crate::error::{invalid_param, Result};

/// Draws `per_round` distinct clients without replacement with inclusion
/// probabilities `π_i = B·p_i`, by systematic sampling over a random
/// permutation. `weights = None` means uniform `p_i = 1/N`. Returns ids in
/// ascending order.
pub fn sample_clients(clients: usize, per_round: usize, weights: Option<&[f64]>, rng: &mut StreamRng) -> Result<Vec<usize>> {
    if per_round > clients {
        return Err(invalid_param(format!("cannot sample B={per_round} of N={clients} clients")));
    }
    if per_round == 0 {
        return Err(invalid_param("B must be >= 1"));
    }
    if per_round == clients {
        return Ok((0..clients).collect());
    }
    let pi: Vec<f64> = match weights {
        None => vec![per_round as f64 / clients as f64; clients],
        Some(w) => {
            if w.len() != clients {
                return Err(invalid_param(format!("{} weights for {clients} clients", w.len())));
            }
            if w.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(invalid_param("client weights must be finite and >= 0"));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(invalid_param(format!("client weights sum to {total}, expected 1")));
            }
            let pi: Vec<f64> = w.iter().map(|p| per_round as f64 * p / total).collect();
            if let Some(i) = pi.iter().position(|&x| x > 1.0 + 1e-12) {
                return Err(invalid_param(format!(
                    "client {i} has inclusion probability {} > 1; reduce B or flatten the weights",
                    pi[i]
                )));
            }
            pi
        }
    };

    let mut order: Vec<usize> = (0..clients).collect();
    for i in (1..clients).rev() {
        let j = rng.next_below(i + 1);
        order.swap(i, j);
    }
    let start = rng.next_uniform();
    let mut chosen = Vec::with_capacity(per_round);
    let mut cumulative = 0.0;
    let mut next = start;
    for &id in &order {
        cumulative += pi[id].min(1.0);
        if chosen.len() < per_round && cumulative > next {
            chosen.push(id);
            next += 1.0;
        }
    }
    // Rounding can leave the final unit just short of the last threshold.
    if chosen.len() < per_round {
        if let Some(&id) = order.iter().rev().find(|id| pi[**id] > 0.0 && !chosen.contains(id)) {
            chosen.push(id);
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}
