use std::fmt::Write;

use serde_json::json;

use super::RunTrace;

/// Column order of [`RunTrace::to_csv`].
pub const CSV_HEADER: &str = "round,algo,loss,grad_sq_norm,bits_cum,sigma,eps_cum,clamps";

/// 17 significant digits: lossless for f64.
fn float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

impl RunTrace {
    /// One row per completed round. `eps_cum` is `inf` for non-private runs.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.round,
                self.config.algorithm,
                float(r.loss),
                float(r.grad_sq_norm),
                r.bits_cumulative,
                float(r.sigma_used),
                float(r.epsilon_spent_cumulative.unwrap_or(f64::INFINITY)),
                r.clamp_count
            )
            .expect("writing to a String");
        }
        out
    }

    /// Summary document: the run summary plus θ₀ and the final model.
    pub fn summary_json(&self) -> String {
        let doc = json!({
            "summary": self.summary,
            "theta0": self.theta0,
            "final_theta": self.final_theta,
            "config": self.config,
        });
        serde_json::to_string_pretty(&doc).expect("summary serializes")
    }
}
