use serde::{Deserialize, Serialize};

use crate::coupled_prng::{Purpose, SeedMaterial, StreamRng};
use crate::error::{invalid_param, Result};

use super::objective::{LocalDataset, ObjectiveKind};

/// Stream id reserved for the planted weight vector.
const PLANTED_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub clients: usize,
    pub dim: usize,
    pub samples_per_client: usize,
    pub noise_std: f64,
    pub kind: ObjectiveKind,
    /// Std of the per-client shift applied to `w*`; 0 gives an iid partition.
    #[serde(default)]
    pub heterogeneity: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub planted: Vec<f64>,
    pub datasets: Vec<LocalDataset>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Planted-model data: standard-normal features, linear targets with
/// Gaussian noise or Bernoulli labels.
pub fn synth_partition(seed: &SeedMaterial, spec: &SynthSpec) -> Result<SyntheticData> {
    if spec.clients == 0 || spec.dim == 0 || spec.samples_per_client == 0 {
        return Err(invalid_param("synthetic data needs positive client, dimension and sample counts"));
    }
    if !(spec.noise_std >= 0.0) || !(spec.heterogeneity >= 0.0) {
        return Err(invalid_param("noise and heterogeneity must be >= 0"));
    }
    let data_seed = seed.for_purpose(Purpose::Data);
    let mut rng = StreamRng::new(&data_seed, PLANTED_STREAM, 0);
    let planted: Vec<f64> = (0..spec.dim).map(|_| rng.next_standard_normal()).collect();

    let datasets = (0..spec.clients)
        .map(|client| {
            let w: Vec<f64> = if spec.heterogeneity > 0.0 {
                let mut shift = StreamRng::new(&data_seed, client as u64, 1);
                planted
                    .iter()
                    .map(|w| w + spec.heterogeneity * shift.next_standard_normal())
                    .collect()
            } else {
                planted.clone()
            };
            let mut rng = StreamRng::new(&data_seed, client as u64, 0);
            let n = spec.samples_per_client;
            let features: Vec<f64> = (0..n * spec.dim).map(|_| rng.next_standard_normal()).collect();
            let targets = (0..n)
                .map(|j| {
                    let z: f64 = features[j * spec.dim..(j + 1) * spec.dim]
                        .iter()
                        .zip(&w)
                        .map(|(x, w)| x * w)
                        .sum();
                    match spec.kind {
                        ObjectiveKind::LeastSquares => z + spec.noise_std * rng.next_standard_normal(),
                        ObjectiveKind::Logistic => {
                            if rng.next_uniform() < sigmoid(z) {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    }
                })
                .collect();
            LocalDataset::new(client, spec.dim, features, targets)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticData { planted, datasets })
}
