//! Unbiased stochastic rounding onto `2^b` evenly spaced levels spanning
//! `[-‖v‖∞, +‖v‖∞]` (so `l = 2^b - 1` intervals).

use crate::error::{invalid_input, invalid_param, Error, Result};

pub const MAX_STOCHASTIC_BITS: u32 = 62;

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticQuantized {
    /// Half-width of the level grid, i.e. the input's ∞-norm.
    pub scale: f64,
    pub bits: u32,
    /// Level index per element, in `0..=2^bits - 1`.
    pub levels: Vec<u64>,
}

impl StochasticQuantized {
    pub fn intervals(&self) -> u64 {
        (1u64 << self.bits) - 1
    }

    pub fn level_value(&self, level: u64) -> f64 {
        let l = self.intervals();
        if level >= l {
            self.scale
        } else if level == 0 {
            -self.scale
        } else {
            -self.scale + level as f64 * (2.0 * self.scale / l as f64)
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.scale == 0.0 {
            return vec![0.0; self.levels.len()];
        }
        self.levels.iter().map(|&t| self.level_value(t)).collect()
    }
}

/// Quantizes `v` using one uniform per element to decide the rounding
/// direction.
pub fn stochastic_quantize_levels(v: &[f64], bits: u32, uniforms: &[f64]) -> Result<StochasticQuantized> {
    if bits == 0 || bits > MAX_STOCHASTIC_BITS {
        return Err(invalid_param(format!("bits must be in 1..={MAX_STOCHASTIC_BITS}, got {bits}")));
    }
    if uniforms.len() < v.len() {
        return Err(Error::StreamExhausted {
            needed: v.len(),
            available: uniforms.len(),
        });
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(invalid_input(format!("non-finite element {bad}")));
    }
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let l = (1u64 << bits) - 1;
    if scale == 0.0 {
        return Ok(StochasticQuantized {
            scale,
            bits,
            levels: vec![0; v.len()],
        });
    }
    let step = 2.0 * scale / l as f64;
    let levels = v
        .iter()
        .zip(uniforms)
        .map(|(&x, &u)| {
            let s = ((x + scale) / step).clamp(0.0, l as f64);
            let lo = s.floor();
            if lo as u64 >= l {
                return l;
            }
            let frac = s - lo;
            lo as u64 + u64::from(u < frac)
        })
        .collect();
    Ok(StochasticQuantized { scale, bits, levels })
}

/// Stochastic quantization returning the reconstructed values.
pub fn stochastic_quantize(v: &[f64], bits: u32, uniforms: &[f64]) -> Result<Vec<f64>> {
    let q = stochastic_quantize_levels(v, bits, uniforms)?;
    if q.scale == 0.0 {
        return Ok(v.to_vec());
    }
    Ok(q.values())
}
