//! Quantizer codecs.
//!
//! [`GauLrqCodec`] is the Gaussian layered randomized quantizer: a dithered
//! quantizer whose step is itself random, drawn so that the reconstruction
//! error is exactly `N(0, σ²)` for any input. A layer is sampled from two
//! uniforms. The first gives `x ~ N(0, σ²)` through the inverse normal CDF.
//! The second gives a height `y` under the density at `x`, reflected to
//! `1 - y` when `x < 0`. The horizontal slice of that region through `y` is
//! `[L, R]`, and its width is the quantization step.

mod dithered;
mod stochastic;

pub use dithered::DitheredCodec;
pub use stochastic::{
    stochastic_quantize, stochastic_quantize_levels, StochasticQuantized, MAX_STOCHASTIC_BITS,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::normal::inverse_normal_cdf;

/// `2·sqrt(2·ln 2)`: the minimum layer width per unit σ.
pub const MIN_STEP_FACTOR: f64 = 2.354_820_045_030_949_3;

/// Widest fixed-length index the wire format carries.
pub const MAX_INDEX_BITS: u32 = 64;

/// Slack on `log2` so that ratios landing on a power of two up to rounding
/// do not gain a bit.
const BIT_WIDTH_SLACK: f64 = 1e-12;

/// Indices beyond this magnitude are rejected rather than cast.
const INDEX_LIMIT: f64 = 4.0e18;

/// One draw of the layered coupler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSample {
    /// Dither, in input units.
    pub x: f64,
    /// Layer height in (0, 1).
    pub y: f64,
    pub left: f64,
    pub right: f64,
    /// `right - left`.
    pub q_step: f64,
}

impl LayerSample {
    /// Builds a layer from explicit endpoints; used for hand-constructed
    /// layers. `y` is not derivable without σ and is set to NaN.
    pub fn from_endpoints(x: f64, left: f64, right: f64) -> Result<Self> {
        let layer = LayerSample {
            x,
            y: f64::NAN,
            left,
            right,
            q_step: right - left,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.x.is_finite() && self.left.is_finite() && self.right.is_finite();
        if !finite || !(self.q_step > 0.0) || self.x < self.left || self.x > self.right {
            return Err(invalid_param(format!("invalid layer {self:?}")));
        }
        Ok(())
    }

    /// Index of the lattice point nearest the dither for a zero input,
    /// `round((R - x) / q)`, always 0 or 1. Subtracting it from an index
    /// centres the symbol alphabet on the two's-complement range.
    pub fn symbol_offset(&self) -> i64 {
        ((self.right - self.x) / self.q_step + 0.5).floor() as i64
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(invalid_param(format!("sigma must be finite and > 0, got {sigma}")));
    }
    Ok(())
}

fn check_unit(u: f64, name: &str) -> Result<()> {
    if !(u > 0.0 && u < 1.0) {
        return Err(invalid_param(format!("{name} must lie strictly inside (0, 1), got {u}")));
    }
    Ok(())
}

/// Draws a layer for noise scale `sigma` from two uniforms.
pub fn sample_layer(sigma: f64, uniforms: (f64, f64)) -> Result<LayerSample> {
    check_sigma(sigma)?;
    let (u1, u2) = uniforms;
    check_unit(u1, "u1")?;
    check_unit(u2, "u2")?;

    let x = sigma * inverse_normal_cdf(u1);
    let z = x / sigma;
    let height = (-0.5 * z * z).exp() * u2;
    // Keep both ln(y) and ln(1 - y) accurate on either side of the flip.
    let (y, ln_y, ln_1m_y) = if x >= 0.0 {
        (height, height.ln(), (-height).ln_1p())
    } else {
        (1.0 - height, (-height).ln_1p(), height.ln())
    };
    let left = -sigma * (-2.0 * ln_1m_y).sqrt();
    let right = sigma * (-2.0 * ln_y).sqrt();
    Ok(LayerSample {
        x,
        y,
        left,
        right,
        q_step: right - left,
    })
}

/// `m = floor((u + R - x) / (R - L))`.
pub fn lrq_encode(u: f64, layer: &LayerSample) -> Result<i64> {
    if !u.is_finite() {
        return Err(invalid_input(format!("non-finite input {u}")));
    }
    layer.validate()?;
    let t = ((u + layer.right - layer.x) / layer.q_step).floor();
    if !t.is_finite() || t.abs() > INDEX_LIMIT {
        return Err(invalid_input(format!("index for {u} overflows")));
    }
    Ok(t as i64)
}

/// `û = m (R - L) + x`.
pub fn lrq_decode(m: i64, layer: &LayerSample) -> Result<f64> {
    layer.validate()?;
    Ok(m as f64 * layer.q_step + layer.x)
}

/// Fixed-length bits per element for inputs in `[a1, a2]`:
/// `ceil(log2((a2 - a1) / (2σ·sqrt(2 ln 2)) + 1))`, at least 1.
pub fn bit_width(a1: f64, a2: f64, sigma: f64) -> Result<u32> {
    check_sigma(sigma)?;
    if !(a1.is_finite() && a2.is_finite() && a2 > a1) {
        return Err(invalid_param(format!("need finite a2 > a1, got [{a1}, {a2}]")));
    }
    let ratio = (a2 - a1) / (MIN_STEP_FACTOR * sigma);
    let bits = ((ratio + 1.0).log2() - BIT_WIDTH_SLACK).ceil().max(1.0);
    if bits > MAX_INDEX_BITS as f64 {
        return Err(invalid_param(format!(
            "range/sigma ratio {ratio:e} needs {bits} bits, more than {MAX_INDEX_BITS}"
        )));
    }
    Ok(bits as u32)
}

/// Bits per element for a vector with the given ∞-norm, symmetric range.
/// A zero vector still costs one bit per element.
pub fn bits_for_inf_norm(inf_norm: f64, sigma: f64) -> Result<u32> {
    if inf_norm == 0.0 {
        check_sigma(sigma)?;
        return Ok(1);
    }
    bit_width(-inf_norm, inf_norm, sigma)
}

/// Binds an encoded vector to its (client, round) stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamTag {
    pub client_id: u32,
    pub round: u32,
}

/// Gau-LRQ output for one update vector.
///
/// `indices` are the transmitted symbols `m_j - offset_j`, where `offset_j`
/// is [`LayerSample::symbol_offset`] of the element's layer, clamped to the
/// `bits_per_element` two's-complement range.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVector {
    pub indices: Vec<i64>,
    pub dim: usize,
    pub bits_per_element: u32,
    pub stream_tag: StreamTag,
    pub clamp_count: usize,
}

/// Inclusive two's-complement range of a `bits`-wide signed integer.
pub fn signed_range(bits: u32) -> (i64, i64) {
    debug_assert!((1..=64).contains(&bits));
    if bits == 64 {
        (i64::MIN, i64::MAX)
    } else {
        (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GauLrqCodec {
    sigma: f64,
}

impl GauLrqCodec {
    pub fn new(sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sample_layer(&self, uniforms: (f64, f64)) -> Result<LayerSample> {
        sample_layer(self.sigma, uniforms)
    }

    /// Element-wise encoding with one uniform pair per element.
    pub fn quantize_vector(
        &self,
        v: &[f64],
        pairs: &[(f64, f64)],
        stream_tag: StreamTag,
    ) -> Result<EncodedVector> {
        if pairs.len() != v.len() {
            return Err(Error::DimensionMismatch {
                expected: v.len(),
                found: pairs.len(),
            });
        }
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(invalid_input(format!("non-finite element {bad}")));
        }
        let inf_norm = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let bits = bits_for_inf_norm(inf_norm, self.sigma)?;
        let (lo, hi) = signed_range(bits);

        let mut clamp_count = 0;
        let mut indices = Vec::with_capacity(v.len());
        for (&u, &pair) in v.iter().zip(pairs) {
            let layer = self.sample_layer(pair)?;
            let symbol = lrq_encode(u, &layer)? - layer.symbol_offset();
            let clamped = symbol.clamp(lo, hi);
            if clamped != symbol {
                clamp_count += 1;
            }
            indices.push(clamped);
        }
        Ok(EncodedVector {
            indices,
            dim: v.len(),
            bits_per_element: bits,
            stream_tag,
            clamp_count,
        })
    }

    /// Server-side reconstruction from symbols and the regenerated pairs.
    pub fn dequantize(&self, indices: &[i64], pairs: &[(f64, f64)]) -> Result<Vec<f64>> {
        if pairs.len() != indices.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                found: pairs.len(),
            });
        }
        indices
            .iter()
            .zip(pairs)
            .map(|(&s, &pair)| {
                let layer = self.sample_layer(pair)?;
                lrq_decode(s + layer.symbol_offset(), &layer)
            })
            .collect()
    }
}
