//! Client-level differential privacy accounting and update clipping.
//!
//! Noise scales are expressed in clipped-update units. The fixed schedule
//! splits `(ε, δ)` evenly across `K` rounds; the dynamic schedule spends less
//! budget early (larger σ) and more late, with `σ_k² ∝ τ^{k/2}`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let budget = Self { epsilon, delta };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(invalid_param(format!("epsilon must be finite and > 0, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid_param(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }

    pub fn ln_inv_delta(&self) -> f64 {
        -self.delta.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Fixed,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSchedule {
    pub kind: ScheduleKind,
    pub sigmas: Vec<f64>,
    /// Decay factor; 1 for fixed schedules.
    pub tau: f64,
}

impl SigmaSchedule {
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn sigma(&self, round: usize) -> Option<f64> {
        self.sigmas.get(round).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    #[default]
    Fixed,
    MedianAdaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipConfig {
    pub s2: f64,
    #[serde(default)]
    pub mode: ClipMode,
}

fn check_counts(s2: f64, rounds: usize, per_round: usize, clients: usize) -> Result<()> {
    if !(s2.is_finite() && s2 > 0.0) {
        return Err(invalid_param(format!("clip bound S2 must be finite and > 0, got {s2}")));
    }
    if rounds == 0 || per_round == 0 || clients == 0 {
        return Err(invalid_param(format!(
            "K, B, N must be positive, got K={rounds} B={per_round} N={clients}"
        )));
    }
    if per_round > clients {
        return Err(invalid_param(format!("B={per_round} exceeds N={clients}")));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(invalid_param(format!("tau must lie in (0, 1], got {tau}")));
    }
    Ok(())
}

/// `4 S2² B ln(1/δ) / (N² ε²)`: per-round noise variance for a one-round budget.
fn unit_variance(s2: f64, per_round: usize, clients: usize, budget: &PrivacyBudget) -> f64 {
    let n = clients as f64;
    4.0 * s2 * s2 * per_round as f64 * budget.ln_inv_delta() / (n * n * budget.epsilon * budget.epsilon)
}

/// `τ^{(K-1)/2} Σ_{i<K} τ^{-i/2} = Σ_{j<K} τ^{j/2}`, which stays finite for
/// small τ and long horizons.
fn scaled_half_power_sum(tau: f64, rounds: usize) -> f64 {
    (0..rounds).map(|j| tau.powf(j as f64 / 2.0)).sum()
}

/// `σ = 2 S2 sqrt(K B ln(1/δ)) / (N ε)`.
pub fn sigma_fixed(s2: f64, rounds: usize, per_round: usize, clients: usize, budget: &PrivacyBudget) -> Result<f64> {
    check_counts(s2, rounds, per_round, clients)?;
    budget.validate()?;
    Ok((unit_variance(s2, per_round, clients, budget) * rounds as f64).sqrt())
}

pub fn sigma_schedule_fixed(
    s2: f64,
    rounds: usize,
    per_round: usize,
    clients: usize,
    budget: &PrivacyBudget,
) -> Result<SigmaSchedule> {
    let sigma = sigma_fixed(s2, rounds, per_round, clients, budget)?;
    Ok(SigmaSchedule {
        kind: ScheduleKind::Fixed,
        sigmas: vec![sigma; rounds],
        tau: 1.0,
    })
}

/// `σ_k² = (4 S2² B ln(1/δ) / (N² ε²)) · (Σ_i τ^{-i/2}) · τ^{k/2}`, the
/// minimiser of `Σ τ^{-k} σ_k²` subject to spending exactly `ε`. Early
/// entries overflow to `+∞` only when the true value exceeds `f64::MAX`.
pub fn sigma_schedule_dynamic(
    s2: f64,
    rounds: usize,
    per_round: usize,
    clients: usize,
    budget: &PrivacyBudget,
    tau: f64,
) -> Result<SigmaSchedule> {
    check_counts(s2, rounds, per_round, clients)?;
    budget.validate()?;
    check_tau(tau)?;
    let scaled = unit_variance(s2, per_round, clients, budget) * scaled_half_power_sum(tau, rounds);
    let last = rounds - 1;
    let sigmas = (0..rounds)
        .map(|k| (scaled * tau.powf(-((last - k) as f64) / 2.0)).sqrt())
        .collect();
    Ok(SigmaSchedule {
        kind: ScheduleKind::Dynamic,
        sigmas,
        tau,
    })
}

/// Total `ε'` spent by a schedule: `(2 S2 sqrt(B ln(1/δ)) / N) · sqrt(Σ 1/σ_k²)`.
/// A round with `σ = +∞` contributes nothing.
pub fn epsilon_from_sigmas(s2: f64, per_round: usize, clients: usize, delta: f64, sigmas: &[f64]) -> Result<f64> {
    if sigmas.is_empty() {
        return Err(invalid_param("empty sigma schedule"));
    }
    check_counts(s2, sigmas.len(), per_round, clients)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid_param(format!("delta must lie in (0, 1), got {delta}")));
    }
    if let Some(bad) = sigmas.iter().find(|s| !(**s > 0.0)) {
        return Err(invalid_param(format!("sigma must be > 0, got {bad}")));
    }
    let inv_sq: f64 = sigmas.iter().map(|s| 1.0 / (s * s)).sum();
    Ok(2.0 * s2 * (per_round as f64 * -delta.ln()).sqrt() / clients as f64 * inv_sq.sqrt())
}

/// Per-round share `ε_k = ε · τ^{-k/4} / sqrt(Σ_i τ^{-i/2})`; `Σ ε_k² = ε²`.
pub fn per_round_epsilon(round: usize, rounds: usize, tau: f64, budget: &PrivacyBudget) -> Result<f64> {
    budget.validate()?;
    check_tau(tau)?;
    if round >= rounds {
        return Err(invalid_param(format!("round {round} out of range for K={rounds}")));
    }
    let ahead = (rounds - 1 - round) as f64;
    Ok(budget.epsilon / scaled_half_power_sum(tau, rounds).sqrt() * tau.powf(ahead / 4.0))
}

/// Running moment-accountant total across rounds whose clip bound may vary.
/// Equals [`epsilon_from_sigmas`] when `S2` is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyAccountant {
    per_round: usize,
    clients: usize,
    delta: f64,
    sensitivity_sum: f64,
    rounds: usize,
}

impl PrivacyAccountant {
    pub fn new(per_round: usize, clients: usize, delta: f64) -> Self {
        Self {
            per_round,
            clients,
            delta,
            sensitivity_sum: 0.0,
            rounds: 0,
        }
    }

    fn epsilon_for(&self, sum: f64) -> f64 {
        2.0 * (self.per_round as f64 * -self.delta.ln()).sqrt() / self.clients as f64 * sum.sqrt()
    }

    /// Cumulative ε if a round with `(s2, sigma)` were added.
    pub fn peek(&self, s2: f64, sigma: f64) -> f64 {
        self.epsilon_for(self.sensitivity_sum + (s2 / sigma).powi(2))
    }

    pub fn record(&mut self, s2: f64, sigma: f64) -> f64 {
        self.sensitivity_sum += (s2 / sigma).powi(2);
        self.rounds += 1;
        self.spent()
    }

    pub fn spent(&self) -> f64 {
        self.epsilon_for(self.sensitivity_sum)
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }
}

/// `Δ / max{1, ‖Δ‖₂ / S2}`.
pub fn clip_update(delta: &[f64], s2: f64) -> Vec<f64> {
    let norm = l2_norm(delta);
    let factor = (norm / s2).max(1.0);
    if factor == 1.0 {
        return delta.to_vec();
    }
    delta.iter().map(|x| x / factor).collect()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Median of update norms; the lower middle value for even counts.
pub fn median_clip_bound(norms: &[f64]) -> Result<f64> {
    if norms.is_empty() {
        return Err(invalid_param("median of an empty set"));
    }
    let mut sorted = norms.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[(sorted.len() - 1) / 2])
}
