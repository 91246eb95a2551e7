//! In-process simulation of the federated system: client sampling, the five
//! algorithm pipelines, wire framing, aggregation and bit metering.

mod pipeline;
mod sampling;
mod trace;
pub mod wire;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, StopRule};
use crate::coupled_prng::{Purpose, SeedMaterial, StreamRng};
use crate::error::{invalid_input, Error, Result};
use crate::privacy::{
    clip_update, l2_norm, median_clip_bound, sigma_schedule_dynamic, sigma_schedule_fixed, ClipMode, PrivacyAccountant,
    PrivacyBudget, SigmaSchedule,
};
use crate::training::{
    estimate_tau, local_rounds, synth_partition, weighted_error, GlobalObjective, LocalOutcome, LocalSgdParams, Loss,
    ModelState, ObjectiveSpec, SynthSpec,
};

pub use pipeline::{decode_update, encode_update, EncodedUpload};
pub use sampling::sample_clients;
pub use trace::CSV_HEADER;
pub use wire::{Payload, WireHeader, WireMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    LocalSgd,
    GauSgd,
    QgSgd,
    GauLrqSgd,
    DynamicGauLrqSgd,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 5] = [
        AlgorithmKind::LocalSgd,
        AlgorithmKind::GauSgd,
        AlgorithmKind::QgSgd,
        AlgorithmKind::GauLrqSgd,
        AlgorithmKind::DynamicGauLrqSgd,
    ];

    /// Wire tag.
    pub fn tag(self) -> u8 {
        match self {
            AlgorithmKind::LocalSgd => 0,
            AlgorithmKind::GauSgd => 1,
            AlgorithmKind::QgSgd => 2,
            AlgorithmKind::GauLrqSgd => 3,
            AlgorithmKind::DynamicGauLrqSgd => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::LocalSgd => "local_sgd",
            AlgorithmKind::GauSgd => "gau_sgd",
            AlgorithmKind::QgSgd => "qg_sgd",
            AlgorithmKind::GauLrqSgd => "gau_lrq_sgd",
            AlgorithmKind::DynamicGauLrqSgd => "dynamic_gau_lrq_sgd",
        }
    }

    /// Whether updates are clipped and noised under the (ε, δ) budget.
    pub fn is_private(self) -> bool {
        self != AlgorithmKind::LocalSgd
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|a| a.name()).collect();
                invalid_input(format!("unknown algorithm '{s}', expected one of {}", names.join(", ")))
            })
    }
}

/// Outcome of one communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Participating client ids, ascending.
    pub clients: Vec<usize>,
    /// Metered payload bits this round.
    pub bits_sent: u64,
    pub bits_cumulative: u64,
    /// σ applied this round (after any adaptive clip rescaling); 0 for LocalSGD.
    pub sigma_used: f64,
    /// Clip bound applied; `None` when updates are not clipped.
    pub clip_bound: Option<f64>,
    /// Accountant total after this round; `None` for non-private runs.
    pub epsilon_spent_cumulative: Option<f64>,
    /// `F(θ_k)` before the round's update.
    pub loss: f64,
    /// `‖∇F(θ_k)‖²` before the round's update.
    pub grad_sq_norm: f64,
    pub clamp_count: usize,
    /// ∞-norm of each participant's clipped update, in `clients` order.
    pub inf_norms: Vec<f64>,
    /// Bits per element declared by each participant.
    pub bits_per_element: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    BudgetExhausted { round: usize },
    Diverged { round: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: AlgorithmKind,
    pub status: RunStatus,
    pub rounds_completed: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_grad_sq_norm: f64,
    /// τ-weighted mean of `‖∇F(θ_k)‖²` over the completed rounds.
    pub weighted_error: Option<f64>,
    pub tau: f64,
    pub tau_estimate: Option<f64>,
    pub tau_estimate_clamped: bool,
    pub total_bits: u64,
    pub epsilon_spent: Option<f64>,
    pub epsilon_target: f64,
    pub delta: f64,
    pub clamp_total: usize,
    pub elements_total: usize,
    pub sigma_schedule: Vec<f64>,
    pub objective: ObjectiveSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub config: ExperimentConfig,
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
    pub theta0: Vec<f64>,
    pub final_theta: Vec<f64>,
}

/// `θ + (1/B) Σ Δ̂_i`, summed in ascending client-id order.
pub fn aggregate_and_step(updates: &[(usize, Vec<f64>)], theta: &[f64]) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(invalid_input("no updates to aggregate"));
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].0);
    let mut sum = vec![0.0; theta.len()];
    for i in order {
        let update = &updates[i].1;
        if update.len() != theta.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                found: update.len(),
            });
        }
        sum.iter_mut().zip(update).for_each(|(s, u)| *s += u);
    }
    let count = updates.len() as f64;
    Ok(theta.iter().zip(&sum).map(|(t, s)| t + s / count).collect())
}

/// Server-side state advanced between rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub model: ModelState,
    pub accountant: PrivacyAccountant,
    pub bits_cumulative: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoundOutcome {
    Completed(RoundRecord),
    BudgetExhausted,
    Diverged(String),
}

/// A fully prepared experiment: data, objective constants, θ₀ and the σ
/// schedule.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub seed: SeedMaterial,
    pub objective: GlobalObjective,
    pub spec: ObjectiveSpec,
    pub theta0: Vec<f64>,
    pub schedule: Option<SigmaSchedule>,
    budget: PrivacyBudget,
}

fn ordered_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let seed = SeedMaterial::new(config.seed, config.run_id.clone());
        let o = &config.objective;
        let data = synth_partition(
            &seed,
            &SynthSpec {
                clients: config.clients,
                dim: o.dim,
                samples_per_client: o.samples_per_client,
                noise_std: o.label_noise,
                kind: o.kind,
                heterogeneity: o.heterogeneity,
            },
        )?;
        let objective = GlobalObjective::new(Loss::new(o.kind, o.ridge), data.datasets)?;
        let mut init = StreamRng::new(&seed.for_purpose(Purpose::Init), 0, 0);
        let theta0: Vec<f64> = (0..o.dim).map(|_| config.theta0_scale * init.next_standard_normal()).collect();
        let spec = ObjectiveSpec::analyze(&objective, &theta0);
        let budget = PrivacyBudget::new(config.epsilon, config.delta)?;
        let planned = config.budget_rounds();
        let schedule = match config.algorithm {
            _ if planned == 0 || config.rounds == 0 => None,
            AlgorithmKind::LocalSgd => None,
            AlgorithmKind::DynamicGauLrqSgd => Some(sigma_schedule_dynamic(
                config.clip.s2,
                planned,
                config.per_round,
                config.clients,
                &budget,
                config.tau,
            )?),
            _ => Some(sigma_schedule_fixed(config.clip.s2, planned, config.per_round, config.clients, &budget)?),
        };
        Ok(Self {
            config: config.clone(),
            seed,
            objective,
            spec,
            theta0,
            schedule,
            budget,
        })
    }

    pub fn initial_state(&self) -> ServerState {
        ServerState {
            model: ModelState {
                theta: self.theta0.clone(),
                round: 0,
            },
            accountant: PrivacyAccountant::new(self.config.per_round, self.config.clients, self.config.delta),
            bits_cumulative: 0,
        }
    }

    fn local_params(&self) -> LocalSgdParams {
        LocalSgdParams {
            steps: self.config.local_steps,
            learning_rate: self.config.learning_rate,
            batch_size: self.config.batch_size,
            divergence_ceiling: self.config.divergence_ceiling,
        }
    }

    /// Participants `𝓑_k` of round `k`, ascending.
    pub fn sampled_clients(&self, round: usize) -> Result<Vec<usize>> {
        let cfg = &self.config;
        let mut sampler = StreamRng::new(&self.seed.for_purpose(Purpose::ClientSampling), 0, round as u64);
        sample_clients(cfg.clients, cfg.per_round, cfg.client_weights.as_deref(), &mut sampler)
    }

    /// Client `id`'s unclipped local update from `theta` in round `k`.
    pub fn local_update(&self, id: usize, theta: &[f64], round: usize) -> Result<LocalOutcome> {
        let data = self
            .objective
            .datasets
            .get(id)
            .ok_or_else(|| invalid_input(format!("client {id} out of range")))?;
        let mut rng = StreamRng::new(&self.seed.for_purpose(Purpose::Batch), id as u64, round as u64);
        local_rounds(&self.objective.loss, data, theta, &self.local_params(), &mut rng)
    }

    /// Runs round `state.model.round`, advancing `state` on success.
    pub fn run_round(&self, state: &mut ServerState) -> Result<RoundOutcome> {
        let cfg = &self.config;
        let k = state.model.round;
        if k >= cfg.rounds {
            return Err(invalid_input(format!("round {k} is past K={}", cfg.rounds)));
        }
        let algorithm = cfg.algorithm;
        let theta = &state.model.theta;
        let loss = self.objective.value(theta);
        let grad_sq_norm = self.objective.gradient(theta).iter().map(|g| g * g).sum();

        let planned_sigma = match &self.schedule {
            None => 0.0,
            Some(s) => match s.sigma(k) {
                Some(sigma) => sigma,
                None => return Ok(RoundOutcome::BudgetExhausted),
            },
        };
        if algorithm.is_private()
            && cfg.stop_rule == StopRule::Accountant
            && state.accountant.peek(cfg.clip.s2, planned_sigma) > cfg.epsilon * (1.0 + 1e-9)
        {
            return Ok(RoundOutcome::BudgetExhausted);
        }

        let round_u32 = u32::try_from(k).map_err(|_| invalid_input("round exceeds u32"))?;
        let clients = self.sampled_clients(k)?;
        let raw: Vec<LocalOutcome> = clients
            .par_iter()
            .map(|&id| self.local_update(id, theta, k))
            .collect::<Result<_>>()?;
        let mut updates = Vec::with_capacity(raw.len());
        for (id, outcome) in clients.iter().zip(raw) {
            match outcome {
                LocalOutcome::Update(d) => updates.push(d),
                LocalOutcome::Diverged { step, norm } => {
                    return Ok(RoundOutcome::Diverged(format!(
                        "client {id} local step {step}: ‖θ‖ = {norm:e} exceeds ceiling {:e}",
                        cfg.divergence_ceiling
                    )))
                }
            }
        }

        let (clip_bound, sigma_used) = if algorithm.is_private() {
            let bound = match cfg.clip.mode {
                ClipMode::Fixed => cfg.clip.s2,
                ClipMode::MedianAdaptive => {
                    let norms: Vec<f64> = updates.iter().map(|u| l2_norm(u)).collect();
                    let m = median_clip_bound(&norms)?;
                    if m > 0.0 {
                        m
                    } else {
                        cfg.clip.s2
                    }
                }
            };
            (Some(bound), planned_sigma * bound / cfg.clip.s2)
        } else {
            (None, 0.0)
        };

        let uploads: Vec<(Vec<u8>, f64, usize)> = clients
            .par_iter()
            .zip(updates.par_iter())
            .map(|(&id, update)| {
                let sent = match clip_bound {
                    Some(b) => clip_update(update, b),
                    None => update.clone(),
                };
                let up = encode_update(algorithm, &sent, sigma_used, &self.seed, id as u32, round_u32)?;
                Ok((up.message.to_bytes()?, ordered_norm(&sent), up.clamp_count))
            })
            .collect::<Result<_>>()?;

        let decoded: Vec<(usize, Vec<f64>, u64, u32)> = uploads
            .par_iter()
            .map(|(bytes, _, _)| {
                let msg = WireMessage::from_bytes(bytes)?;
                let values = decode_update(&msg, sigma_used, &self.seed)?;
                Ok((msg.header.client_id as usize, values, msg.metered_bits(), msg.header.bits_per_element as u32))
            })
            .collect::<Result<_>>()?;

        let bits_sent: u64 = decoded.iter().map(|d| d.2).sum();
        let bits_per_element = decoded.iter().map(|d| d.3).collect();
        let inf_norms = uploads.iter().map(|u| u.1).collect();
        let clamp_count = uploads.iter().map(|u| u.2).sum();
        let pairs: Vec<(usize, Vec<f64>)> = decoded.into_iter().map(|(id, v, _, _)| (id, v)).collect();
        let next = aggregate_and_step(&pairs, theta)?;
        let norm = l2_norm(&next);
        if !norm.is_finite() || norm > cfg.divergence_ceiling {
            return Ok(RoundOutcome::Diverged(format!(
                "global model norm {norm:e} exceeds ceiling {:e}",
                cfg.divergence_ceiling
            )));
        }

        let epsilon_spent_cumulative = if algorithm.is_private() {
            Some(state.accountant.record(cfg.clip.s2, planned_sigma))
        } else {
            None
        };
        state.bits_cumulative += bits_sent;
        state.model = ModelState { theta: next, round: k + 1 };
        Ok(RoundOutcome::Completed(RoundRecord {
            round: k,
            clients,
            bits_sent,
            bits_cumulative: state.bits_cumulative,
            sigma_used,
            clip_bound,
            epsilon_spent_cumulative,
            loss,
            grad_sq_norm,
            clamp_count,
            inf_norms,
            bits_per_element,
        }))
    }

    /// Runs until `K` rounds, budget exhaustion or divergence.
    pub fn run(&self) -> Result<RunTrace> {
        let mut state = self.initial_state();
        let mut records = Vec::with_capacity(self.config.rounds);
        let mut status = RunStatus::Completed;
        while state.model.round < self.config.rounds {
            let k = state.model.round;
            match self.run_round(&mut state)? {
                RoundOutcome::Completed(r) => records.push(r),
                RoundOutcome::BudgetExhausted => {
                    status = RunStatus::BudgetExhausted { round: k };
                    break;
                }
                RoundOutcome::Diverged(detail) => {
                    status = RunStatus::Diverged { round: k, detail };
                    break;
                }
            }
        }
        let summary = self.summarize(&state, &records, status);
        Ok(RunTrace {
            config: self.config.clone(),
            records,
            summary,
            theta0: self.theta0.clone(),
            final_theta: state.model.theta,
        })
    }

    fn summarize(&self, state: &ServerState, records: &[RoundRecord], status: RunStatus) -> RunSummary {
        let cfg = &self.config;
        let theta = &state.model.theta;
        let initial_loss = self.objective.value(&self.theta0);
        let final_loss = self.objective.value(theta);
        let final_grad_sq_norm = self.objective.gradient(theta).iter().map(|g| g * g).sum();
        let grads: Vec<f64> = records.iter().map(|r| r.grad_sq_norm).collect();
        let weighted = if grads.is_empty() {
            None
        } else {
            weighted_error(&grads, cfg.tau).ok()
        };
        let tau_est = if records.is_empty() {
            None
        } else {
            estimate_tau(final_loss, initial_loss, records.len()).ok()
        };
        let elements_total = records.iter().map(|r| r.clients.len() * cfg.objective.dim).sum();
        RunSummary {
            algorithm: cfg.algorithm,
            status,
            rounds_completed: records.len(),
            initial_loss,
            final_loss,
            final_grad_sq_norm,
            weighted_error: weighted,
            tau: cfg.tau,
            tau_estimate: tau_est.map(|t| t.tau),
            tau_estimate_clamped: tau_est.is_some_and(|t| t.clamped),
            total_bits: state.bits_cumulative,
            epsilon_spent: cfg.algorithm.is_private().then(|| state.accountant.spent()),
            epsilon_target: self.budget.epsilon,
            delta: self.budget.delta,
            clamp_total: records.iter().map(|r| r.clamp_count).sum(),
            elements_total,
            sigma_schedule: self.schedule.as_ref().map(|s| s.sigmas.clone()).unwrap_or_default(),
            objective: self.spec.clone(),
        }
    }
}

/// Builds and runs an experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunTrace> {
    Experiment::new(config)?.run()
}
