//! Experiment configuration: a JSON document with unknown keys rejected and
//! cross-field validation reported by field path.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::AlgorithmKind;
use crate::privacy::ClipConfig;
use crate::training::ObjectiveKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Run exactly `rounds` rounds.
    #[default]
    FixedRounds,
    /// Stop before the accountant would exceed ε.
    Accountant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    pub dim: usize,
    pub samples_per_client: usize,
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default)]
    pub heterogeneity: f64,
}

fn default_run_id() -> String {
    "default".to_string()
}
fn default_theta0_scale() -> f64 {
    1.0
}
fn default_ceiling() -> f64 {
    1e8
}
fn default_delta() -> f64 {
    1e-5
}
fn default_tau() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: AlgorithmKind,
    /// N.
    pub clients: usize,
    /// B.
    pub per_round: usize,
    /// Q.
    pub local_steps: usize,
    /// K.
    pub rounds: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Rounds the σ schedule is planned for; defaults to `rounds`.
    #[serde(default)]
    pub budget_rounds: Option<usize>,
    #[serde(default)]
    pub stop_rule: StopRule,
    pub clip: ClipConfig,
    pub objective: ObjectiveConfig,
    pub seed: u64,
    #[serde(default = "default_run_id")]
    pub run_id: String,
    /// Std of the Gaussian initial point θ₀.
    #[serde(default = "default_theta0_scale")]
    pub theta0_scale: f64,
    #[serde(default = "default_ceiling")]
    pub divergence_ceiling: f64,
    /// Client selection probabilities `p_i`; uniform when absent.
    #[serde(default)]
    pub client_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

/// One failed validation rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                Error::Config(inner.to_string())
            } else {
                Error::Config(format!("{path}: {inner}"))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn budget_rounds(&self) -> usize {
        self.budget_rounds.unwrap_or(self.rounds)
    }

    /// Every violated rule, with the offending field paths.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut bad = |path: &str, message: String| {
            out.push(ConfigIssue {
                path: path.to_string(),
                message,
            })
        };
        if self.clients == 0 {
            bad("clients", "N must be >= 1".into());
        }
        if self.per_round == 0 {
            bad("per_round", "B must be >= 1".into());
        }
        if self.per_round > self.clients {
            bad(
                "per_round",
                format!("B={} exceeds clients N={} (per_round must be <= clients)", self.per_round, self.clients),
            );
        }
        if self.local_steps == 0 {
            bad("local_steps", "Q must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bad("learning_rate", format!("eta must be finite and > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            bad("batch_size", "must be >= 1".into());
        }
        if !(self.epsilon > 0.0) || self.epsilon.is_nan() {
            bad("epsilon", format!("must be > 0, got {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            bad("delta", format!("must lie in (0, 1), got {}", self.delta));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            bad("tau", format!("must lie in (0, 1], got {}", self.tau));
        }
        if let Some(planned) = self.budget_rounds {
            if planned == 0 && self.rounds > 0 {
                bad("budget_rounds", "must be >= 1".into());
            }
            if planned < self.rounds && self.stop_rule == StopRule::FixedRounds && self.algorithm.is_private() {
                bad(
                    "budget_rounds",
                    format!("schedule covers {planned} rounds but rounds={} with stop_rule=fixed_rounds", self.rounds),
                );
            }
        }
        if !(self.clip.s2 > 0.0 && self.clip.s2.is_finite()) {
            bad("clip.s2", format!("must be finite and > 0, got {}", self.clip.s2));
        }
        if self.objective.dim == 0 {
            bad("objective.dim", "must be >= 1".into());
        }
        if self.objective.dim > u32::MAX as usize {
            bad("objective.dim", "exceeds the wire format's u32 range".into());
        }
        if self.objective.samples_per_client == 0 {
            bad("objective.samples_per_client", "must be >= 1".into());
        }
        if !(self.objective.label_noise >= 0.0 && self.objective.label_noise.is_finite()) {
            bad("objective.label_noise", "must be finite and >= 0".into());
        }
        if !(self.objective.ridge >= 0.0 && self.objective.ridge.is_finite()) {
            bad("objective.ridge", "must be finite and >= 0".into());
        }
        if !(self.objective.heterogeneity >= 0.0 && self.objective.heterogeneity.is_finite()) {
            bad("objective.heterogeneity", "must be finite and >= 0".into());
        }
        if !(self.theta0_scale >= 0.0 && self.theta0_scale.is_finite()) {
            bad("theta0_scale", "must be finite and >= 0".into());
        }
        if !(self.divergence_ceiling > 0.0) {
            bad("divergence_ceiling", "must be > 0".into());
        }
        if self.clients > u32::MAX as usize {
            bad("clients", "exceeds the wire format's u32 range".into());
        }
        if let Some(w) = &self.client_weights {
            if w.len() != self.clients {
                bad("client_weights", format!("has {} entries for {} clients", w.len(), self.clients));
            } else if w.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                bad("client_weights", "entries must be finite and >= 0".into());
            } else {
                let total: f64 = w.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    bad("client_weights", format!("sum to {total}, expected 1"));
                } else if w.iter().any(|p| p * self.per_round as f64 > 1.0 + 1e-12) {
                    bad("client_weights", "some B*p_i exceeds 1".into());
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(
                issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
            ))
        }
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_json(s)
    }
}
