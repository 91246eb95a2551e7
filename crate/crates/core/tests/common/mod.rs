#![allow(dead_code)]

use lrq_core::config::ExperimentConfig;
use lrq_core::orchestrator::AlgorithmKind;

/// Small noiseless least-squares setup.
pub fn small_config(algorithm: AlgorithmKind) -> ExperimentConfig {
    let text = format!(
        r#"{{
            "algorithm": "{algorithm}",
            "clients": 12, "per_round": 4, "local_steps": 3, "rounds": 8,
            "learning_rate": 0.1, "batch_size": 4, "epsilon": 5.0, "delta": 1e-5, "tau": 0.9,
            "clip": {{"s2": 1.0, "mode": "fixed"}},
            "objective": {{"kind": "least_squares", "dim": 6, "samples_per_client": 10}},
            "seed": 17
        }}"#
    );
    ExperimentConfig::from_json(&text).expect("valid test config")
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
