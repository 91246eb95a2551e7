//! Subtractively dithered uniform quantizer.

use crate::error::{invalid_input, invalid_param, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DitheredCodec {
    q_step: f64,
}

impl DitheredCodec {
    pub fn new(q_step: f64) -> Result<Self> {
        if !(q_step.is_finite() && q_step > 0.0) {
            return Err(invalid_param(format!("q_step must be finite and > 0, got {q_step}")));
        }
        Ok(Self { q_step })
    }

    pub fn q_step(&self) -> f64 {
        self.q_step
    }

    /// Dither in (-q/2, q/2) from a uniform in (0, 1).
    pub fn dither_from_uniform(&self, u: f64) -> f64 {
        (u - 0.5) * self.q_step
    }

    fn check_dither(&self, x: f64) -> Result<()> {
        let half = 0.5 * self.q_step;
        if !(x > -half && x <= half) {
            return Err(invalid_param(format!("dither {x} outside (-{half}, {half}]")));
        }
        Ok(())
    }

    /// `m = floor((u + x) / q + 1/2)`.
    pub fn encode(&self, u: f64, x: f64) -> Result<i64> {
        if !u.is_finite() {
            return Err(invalid_input(format!("non-finite input {u}")));
        }
        self.check_dither(x)?;
        Ok(((u + x) / self.q_step + 0.5).floor() as i64)
    }

    /// `û = m q - x`.
    pub fn decode(&self, m: i64, x: f64) -> Result<f64> {
        self.check_dither(x)?;
        Ok(m as f64 * self.q_step - x)
    }
}
