//! Layered randomized quantization for differentially private federated
//! learning, with a deterministic round simulator and bound calculators.

pub mod analysis;
pub mod config;
pub mod coupled_prng;
pub mod error;
pub mod gau_lrq;
pub mod normal;
pub mod orchestrator;
pub mod privacy;
pub mod training;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
