//! Closed-form convergence bounds, communication cost and a one-sample
//! Kolmogorov-Smirnov test.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};
use crate::gau_lrq::bits_for_inf_norm;
use crate::orchestrator::RunTrace;
use crate::privacy::{sigma_schedule_dynamic, sigma_schedule_fixed, PrivacyBudget, ScheduleKind};

/// Symbols shared by every bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    /// `F(θ₀) - F(θ*)`.
    pub f_gap: f64,
    pub eta: f64,
    pub local_steps: usize,
    pub rounds: usize,
    pub per_round: usize,
    pub clients: usize,
    pub dim: usize,
    pub alpha_sq: f64,
    pub smoothness: f64,
    pub s2: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub tau: f64,
    /// Representative `‖Δ̃‖∞`.
    pub inf_norm: f64,
}

/// The step-size requirement `ην ≤ 1` and `ηνQ + ν²η²Q(Q-1)/2 ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizeCheck {
    pub eta_nu: f64,
    pub local_condition: f64,
    pub satisfied: bool,
}

/// A bound value with the step-size flag of its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    /// True when the step-size condition is violated; the value is then not
    /// a certified bound.
    pub flagged: bool,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let positive = |name: &str, v: f64, bad: &mut Vec<String>| {
            if !(v > 0.0) {
                bad.push(format!("{name} must be > 0, got {v}"));
            }
        };
        positive("eta", self.eta, &mut bad);
        positive("smoothness", self.smoothness, &mut bad);
        positive("s2", self.s2, &mut bad);
        positive("epsilon", self.epsilon, &mut bad);
        positive("inf_norm", self.inf_norm, &mut bad);
        if !(self.f_gap >= 0.0) {
            bad.push(format!("f_gap must be >= 0, got {}", self.f_gap));
        }
        if !(self.alpha_sq >= 0.0) {
            bad.push(format!("alpha_sq must be >= 0, got {}", self.alpha_sq));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            bad.push(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            bad.push(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        for (name, v) in [
            ("local_steps", self.local_steps),
            ("rounds", self.rounds),
            ("per_round", self.per_round),
            ("clients", self.clients),
            ("dim", self.dim),
        ] {
            if v == 0 {
                bad.push(format!("{name} must be >= 1"));
            }
        }
        if self.per_round > self.clients {
            bad.push(format!("per_round {} exceeds clients {}", self.per_round, self.clients));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(invalid_param(bad.join("; ")))
        }
    }

    pub fn step_size(&self) -> StepSizeCheck {
        let en = self.eta * self.smoothness;
        let q = self.local_steps as f64;
        let local_condition = en * q + en * en * q * (q - 1.0) / 2.0;
        StepSizeCheck {
            eta_nu: en,
            local_condition,
            satisfied: en <= 1.0 && local_condition <= 1.0,
        }
    }

    fn ln_inv_delta(&self) -> f64 {
        -self.delta.ln()
    }

    /// `η² Q N² ε²`.
    fn privacy_denominator(&self) -> f64 {
        let n = self.clients as f64;
        self.eta * self.eta * self.local_steps as f64 * n * n * self.epsilon * self.epsilon
    }

    /// `4 d S2² K ln(1/δ) / (η² Q N² ε²)`.
    pub fn privacy_error(&self) -> f64 {
        4.0 * self.dim as f64 * self.s2 * self.s2 * self.rounds as f64 * self.ln_inv_delta() / self.privacy_denominator()
    }

    fn bound(&self, value: f64) -> Result<Bound> {
        self.validate()?;
        Ok(Bound {
            value,
            flagged: !self.step_size().satisfied,
        })
    }
}

fn geometric_inverse_sum(tau: f64, rounds: usize) -> f64 {
    (0..rounds).map(|k| tau.powi(-(k as i32))).sum()
}

fn lsgd_value(i: &BoundInputs) -> f64 {
    let q = i.local_steps as f64;
    let opt = 2.0 * i.f_gap / (q * i.eta * geometric_inverse_sum(i.tau, i.rounds));
    let variance = q * i.alpha_sq / i.per_round as f64 * ((2.0 * q - 1.0) * (q - 1.0) / (6.0 * q) + 1.0);
    opt + variance
}

/// `2[F(θ₀)-F(θ*)]/(Qη Σ τ^{-k}) + (Qα²/B)[(2Q-1)(Q-1)/(6Q) + 1]`.
pub fn bound_lsgd(inputs: &BoundInputs) -> Result<Bound> {
    inputs.bound(lsgd_value(inputs))
}

/// Local SGD error plus the privacy error `4dS2²K ln(1/δ)/(η²QN²ε²)`.
pub fn bound_gau_lrq(inputs: &BoundInputs) -> Result<Bound> {
    inputs.bound(lsgd_value(inputs) + inputs.privacy_error())
}

/// `AM²(τ^{-k/2}) / QM²(τ^{-k/2})` over `k = 0..K-1`.
pub fn am_qm_factor(tau: f64, rounds: usize) -> Result<f64> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(invalid_param(format!("tau must lie in (0, 1], got {tau}")));
    }
    if rounds == 0 {
        return Err(invalid_param("am_qm_factor needs K >= 1"));
    }
    // Terms rescaled by τ^{(K-1)/2}; the ratio is scale-free.
    let last = rounds - 1;
    let (sum, sum_sq) = (0..rounds).fold((0.0, 0.0), |(s, s2), k| {
        let t = tau.powf((last - k) as f64 / 2.0);
        (s + t, s2 + t * t)
    });
    Ok(sum * sum / (rounds as f64 * sum_sq))
}

/// Local SGD error plus the privacy error scaled by [`am_qm_factor`].
pub fn bound_dynamic(inputs: &BoundInputs) -> Result<Bound> {
    inputs.validate()?;
    let factor = am_qm_factor(inputs.tau, inputs.rounds)?;
    inputs.bound(lsgd_value(inputs) + inputs.privacy_error() * factor)
}

/// Quantization term `8 ln2 d S2² K ln(1/δ)/(η²QN²ε²)` of QG-SGD.
fn qg_quantization(i: &BoundInputs) -> f64 {
    8.0 * LN_2 * i.dim as f64 * i.s2 * i.s2 * i.rounds as f64 * i.ln_inv_delta() / i.privacy_denominator()
}

/// Coupling term `32 ln2 d S2⁴ K² B ln²(1/δ)/(N⁴ ε⁴ ‖Δ̃‖∞² η² Q)` of QG-SGD.
fn qg_coupling(i: &BoundInputs) -> f64 {
    let n2 = (i.clients as f64).powi(2);
    let e2 = i.epsilon * i.epsilon;
    let l = i.ln_inv_delta();
    let k = i.rounds as f64;
    32.0 * LN_2 * i.dim as f64 * i.s2.powi(4) * k * k * i.per_round as f64 * l * l
        / (n2 * n2 * e2 * e2 * i.inf_norm * i.inf_norm * i.eta * i.eta * i.local_steps as f64)
}

pub fn bound_qg(inputs: &BoundInputs) -> Result<Bound> {
    inputs.bound(lsgd_value(inputs) + inputs.privacy_error() + qg_quantization(inputs) + qg_coupling(inputs))
}

/// Privacy term `20 d² S2² K / (η² Q N² ε² δ²)` of BQ-SGD.
pub fn bq_privacy_error(i: &BoundInputs) -> f64 {
    let d = i.dim as f64;
    20.0 * d * d * i.s2 * i.s2 * i.rounds as f64 / (i.privacy_denominator() * i.delta * i.delta)
}

pub fn bound_bq(inputs: &BoundInputs) -> Result<Bound> {
    let quant = 2.0 * LN_2 * inputs.dim as f64 * inputs.s2 * inputs.s2 * inputs.rounds as f64 * inputs.ln_inv_delta()
        / inputs.privacy_denominator();
    inputs.bound(lsgd_value(inputs) + bq_privacy_error(inputs) + quant)
}

/// `Σ_k Σ_i d·b(‖Δ̃_k^(i)‖∞, σ_k)` with the quantizer's integer bit widths.
pub fn comm_cost_bits(dim: usize, inf_norms: &[Vec<f64>], sigmas: &[f64]) -> Result<u64> {
    if inf_norms.len() != sigmas.len() {
        return Err(Error::DimensionMismatch {
            expected: sigmas.len(),
            found: inf_norms.len(),
        });
    }
    let mut total = 0u64;
    for (norms, &sigma) in inf_norms.iter().zip(sigmas) {
        for &n in norms {
            total += dim as u64 * bits_for_inf_norm(n, sigma)? as u64;
        }
    }
    Ok(total)
}

/// Communication cost of Gau-LRQ-SGD (fixed) or its dynamic variant, with
/// the σ schedule derived from `inputs`. `inf_norms[k]` holds the round-`k`
/// per-client ∞-norms; its length must equal `K`.
pub fn comm_cost(inputs: &BoundInputs, inf_norms: &[Vec<f64>], schedule: ScheduleKind) -> Result<u64> {
    inputs.validate()?;
    if inf_norms.len() != inputs.rounds {
        return Err(Error::DimensionMismatch {
            expected: inputs.rounds,
            found: inf_norms.len(),
        });
    }
    let budget = PrivacyBudget::new(inputs.epsilon, inputs.delta)?;
    let sched = match schedule {
        ScheduleKind::Fixed => sigma_schedule_fixed(inputs.s2, inputs.rounds, inputs.per_round, inputs.clients, &budget)?,
        ScheduleKind::Dynamic => sigma_schedule_dynamic(
            inputs.s2,
            inputs.rounds,
            inputs.per_round,
            inputs.clients,
            &budget,
            inputs.tau,
        )?,
    };
    comm_cost_bits(inputs.dim, inf_norms, &sched.sigmas)
}

/// Full-precision cost `K·B·d·32`.
pub fn float_comm_cost(rounds: usize, per_round: usize, dim: usize) -> u64 {
    rounds as u64 * per_round as u64 * dim as u64 * 32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub critical_value: f64,
    /// Rejected at significance 0.01.
    pub reject: bool,
}

pub const KS_MIN_SAMPLES: usize = 100;

/// One-sample Kolmogorov-Smirnov test against `cdf`, with the asymptotic
/// 1% critical value `1.63/√n`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(invalid_param(format!(
            "KS test needs at least {KS_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(invalid_param("KS samples contain NaN"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let statistic = sorted.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    });
    let critical_value = 1.63 / n.sqrt();
    Ok(KsResult {
        statistic,
        critical_value,
        reject: statistic > critical_value,
    })
}

/// All bounds for one input set, as exported next to a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub step_size: StepSizeCheck,
    pub lsgd: f64,
    pub gau_lrq: f64,
    pub dynamic: f64,
    pub qg: f64,
    pub bq: f64,
    pub am_qm_factor: f64,
    pub dynamic_le_gau_lrq: bool,
    pub gau_lrq_le_qg: bool,
}

impl BoundReport {
    pub fn new(inputs: &BoundInputs) -> Result<Self> {
        let lsgd = bound_lsgd(inputs)?.value;
        let gau_lrq = bound_gau_lrq(inputs)?.value;
        let dynamic = bound_dynamic(inputs)?.value;
        let qg = bound_qg(inputs)?.value;
        Ok(Self {
            inputs: *inputs,
            step_size: inputs.step_size(),
            lsgd,
            gau_lrq,
            dynamic,
            qg,
            bq: bound_bq(inputs)?.value,
            am_qm_factor: am_qm_factor(inputs.tau, inputs.rounds)?,
            dynamic_le_gau_lrq: dynamic <= gau_lrq,
            gau_lrq_le_qg: gau_lrq <= qg,
        })
    }

    /// Inputs taken from a run: objective constants from the trace, and the
    /// mean recorded ∞-norm (the clip bound when nothing was recorded).
    pub fn from_trace(trace: &RunTrace) -> Result<Self> {
        let cfg = &trace.config;
        let norms: Vec<f64> = trace.records.iter().flat_map(|r| r.inf_norms.iter().copied()).collect();
        let inf_norm = if norms.is_empty() {
            cfg.clip.s2
        } else {
            let mean = norms.iter().sum::<f64>() / norms.len() as f64;
            if mean > 0.0 {
                mean
            } else {
                cfg.clip.s2
            }
        };
        let spec = &trace.summary.objective;
        Self::new(&BoundInputs {
            f_gap: spec.initial_gap,
            eta: cfg.learning_rate,
            local_steps: cfg.local_steps,
            rounds: cfg.rounds.max(1),
            per_round: cfg.per_round,
            clients: cfg.clients,
            dim: cfg.objective.dim,
            alpha_sq: spec.gradient_variance,
            smoothness: spec.smoothness,
            s2: cfg.clip.s2,
            epsilon: cfg.epsilon,
            delta: cfg.delta,
            tau: cfg.tau,
            inf_norm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::normal_cdf;

    /// Shared numeric instance; reference values from an independent
    /// 50-digit evaluation (tests/oracles/oracle_values.py).
    pub(crate) fn instance() -> BoundInputs {
        BoundInputs {
            f_gap: 1.0,
            eta: 0.01,
            local_steps: 5,
            rounds: 50,
            per_round: 10,
            clients: 100,
            dim: 20,
            alpha_sq: 0.1,
            smoothness: 1.0,
            s2: 1.0,
            epsilon: 1.0,
            delta: 1e-5,
            tau: 0.9,
            inf_norm: 0.5,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn numeric_instance_matches_reference() {
        let i = instance();
        assert!(rel(bound_lsgd(&i).unwrap().value, 0.133_024_329_808_220_16) < 1e-12);
        assert!(rel(bound_gau_lrq(&i).unwrap().value, 9_210.473_396_305_991) < 1e-12);
        assert!(rel(am_qm_factor(0.9, 50).unwrap(), 0.657_732_405_432_826_9) < 1e-12);
        assert!(rel(bound_dynamic(&i).unwrap().value, 6_058.072_352_044_781) < 1e-12);
        assert!(rel(bound_qg(&i).unwrap().value, 139_578.579_578_585_95) < 1e-12);
        assert!(rel(bound_bq(&i).unwrap().value, 800_000_000_003_192.2) < 1e-12);
    }

    #[test]
    fn single_local_step_has_unit_bracket() {
        let mut i = instance();
        i.local_steps = 1;
        let want = 2.0 * i.f_gap / (i.eta * geometric_inverse_sum(i.tau, i.rounds)) + i.alpha_sq / i.per_round as f64;
        assert!(rel(bound_lsgd(&i).unwrap().value, want) < 1e-15);
    }

    #[test]
    fn lsgd_vanishes_without_variance() {
        let mut i = instance();
        i.alpha_sq = 0.0;
        i.rounds = 2000;
        assert!(bound_lsgd(&i).unwrap().value < 1e-80);
    }

    #[test]
    fn privacy_term_scalings() {
        let mut i = instance();
        i.epsilon = f64::INFINITY;
        assert_eq!(bound_gau_lrq(&i).unwrap().value, bound_lsgd(&i).unwrap().value);
        let i = instance();
        let mut half = i;
        half.epsilon /= 2.0;
        assert!(rel(half.privacy_error(), 4.0 * i.privacy_error()) < 1e-14);
        let mut twice_d = i;
        twice_d.dim *= 2;
        assert!(rel(bq_privacy_error(&twice_d), 4.0 * bq_privacy_error(&i)) < 1e-14);
        assert!(rel(twice_d.privacy_error(), 2.0 * i.privacy_error()) < 1e-14);
    }

    #[test]
    fn am_qm_examples() {
        assert_eq!(am_qm_factor(1.0, 37).unwrap(), 1.0);
        assert_eq!(am_qm_factor(0.3, 1).unwrap(), 1.0);
        assert!((am_qm_factor(0.25, 2).unwrap() - 0.9).abs() < 1e-15);
        assert!(am_qm_factor(0.0, 2).is_err());
        assert!(am_qm_factor(0.5, 0).is_err());
        let mut prev = 1.0;
        for k in 2..=200 {
            let f = am_qm_factor(0.9, k).unwrap();
            assert!(f > 0.0 && f < prev, "K={k}");
            prev = f;
        }
    }

    #[test]
    fn dynamic_equals_fixed_at_tau_one() {
        let mut i = instance();
        i.tau = 1.0;
        assert_eq!(bound_dynamic(&i).unwrap().value, bound_gau_lrq(&i).unwrap().value);
        assert!(bound_dynamic(&instance()).unwrap().value < bound_gau_lrq(&instance()).unwrap().value);
    }

    #[test]
    fn qg_coupling_vanishes_for_large_norms() {
        let mut i = instance();
        i.inf_norm = 1e30;
        let gap = bound_qg(&i).unwrap().value - bound_gau_lrq(&i).unwrap().value;
        assert!(rel(gap, qg_quantization(&i)) < 1e-9);
    }

    #[test]
    fn step_size_flag() {
        let i = instance();
        assert!(!bound_lsgd(&i).unwrap().flagged);
        let mut big = i;
        big.eta = 0.5;
        let b = bound_gau_lrq(&big).unwrap();
        assert!(b.flagged && b.value.is_finite());
        let check = big.step_size();
        assert_eq!(check.eta_nu, 0.5);
        assert!(check.local_condition > 1.0);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let mut i = instance();
        i.per_round = 200;
        assert!(bound_lsgd(&i).is_err());
        let mut i = instance();
        i.delta = 1.0;
        assert!(bound_gau_lrq(&i).is_err());
    }

    #[test]
    fn comm_cost_examples() {
        // 2 bits per element, d = 4.
        let sigma = 1.0 / (3.0 * (2.0 * LN_2).sqrt());
        assert_eq!(comm_cost_bits(4, &[vec![1.0]], &[sigma]).unwrap(), 8);
        assert!(comm_cost_bits(4, &[vec![1.0]], &[]).is_err());
        let mut i = instance();
        i.rounds = 3;
        i.tau = 1.0;
        let norms = vec![vec![0.1, 0.4], vec![0.2, 0.3], vec![0.05, 0.5]];
        assert_eq!(
            comm_cost(&i, &norms, ScheduleKind::Fixed).unwrap(),
            comm_cost(&i, &norms, ScheduleKind::Dynamic).unwrap()
        );
        assert!(comm_cost(&i, &norms[..2], ScheduleKind::Fixed).is_err());
        assert_eq!(float_comm_cost(3, 2, 5), 960);
    }

    #[test]
    fn ks_examples() {
        assert!(ks_statistic(&[], normal_cdf).is_err());
        assert!(ks_statistic(&[0.0; 99], normal_cdf).is_err());
        let uniform: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let r = ks_statistic(&uniform, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(r.statistic <= 0.5 / 1000.0 + 1e-15 && !r.reject);
        assert!(ks_statistic(&uniform, normal_cdf).unwrap().reject);
    }

    #[test]
    fn report_orderings() {
        let r = BoundReport::new(&instance()).unwrap();
        assert!(r.dynamic_le_gau_lrq && r.gau_lrq_le_qg);
        assert!(r.dynamic < r.gau_lrq && r.gau_lrq < r.qg);
    }
}
