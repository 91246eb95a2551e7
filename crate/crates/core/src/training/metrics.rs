use crate::error::{invalid_param, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauEstimate {
    pub tau: f64,
    /// True when the raw estimate left (0, 1] and was clamped.
    pub clamped: bool,
}

/// `τ_est = (F(θ_k) / F(θ_0))^{1/k}`, clamped into (0, 1].
pub fn estimate_tau(f_k: f64, f_0: f64, k: usize) -> Result<TauEstimate> {
    if !(f_k > 0.0 && f_0 > 0.0) || !f_k.is_finite() || !f_0.is_finite() {
        return Err(invalid_param(format!("objective values must be finite and > 0, got F_k={f_k}, F_0={f_0}")));
    }
    if k == 0 {
        return Err(invalid_param("tau estimate needs k >= 1"));
    }
    let raw = (f_k / f_0).powf(1.0 / k as f64);
    if raw > 1.0 {
        Ok(TauEstimate { tau: 1.0, clamped: true })
    } else if raw <= 0.0 {
        Ok(TauEstimate {
            tau: f64::MIN_POSITIVE,
            clamped: true,
        })
    } else {
        Ok(TauEstimate { tau: raw, clamped: false })
    }
}

/// `E = Σ τ^{-k} g_k / Σ τ^{-k}`, evaluated with weights rescaled by
/// `τ^{K-1}` so that long runs do not overflow.
pub fn weighted_error(grad_sq_norms: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(invalid_param(format!("tau must lie in (0, 1], got {tau}")));
    }
    if grad_sq_norms.is_empty() {
        return Err(invalid_param("weighted error of an empty sequence"));
    }
    let last = grad_sq_norms.len() - 1;
    let (num, den) = grad_sq_norms
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(num, den), (k, g)| {
            let w = tau.powi((last - k) as i32);
            (num + w * g, den + w)
        });
    Ok(num / den)
}
