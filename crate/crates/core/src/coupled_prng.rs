//! Counter-based pseudo-random streams shared by clients and the server.
//!
//! Every draw is a pure function of `(SeedMaterial, StreamCursor)`, so a
//! client encoding element `j` of its round-`k` update and the server decoding
//! it reproduce the same layer without exchanging any state.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::inverse_normal_cdf;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Largest `f64` strictly below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn absorb(state: u64, field: u64) -> u64 {
    mix64(state.wrapping_add(GOLDEN_GAMMA) ^ field)
}

/// Maps a 64-bit word to (0, 1) as `(value + 1) / (2^64 + 1)`.
#[inline]
pub fn word_to_unit(value: u64) -> f64 {
    const DENOM: f64 = 18_446_744_073_709_551_617.0; // 2^64 + 1, rounds to 2^64
    let u = (value as f64 + 1.0) / DENOM;
    if u >= 1.0 {
        BELOW_ONE
    } else if u <= 0.0 {
        f64::MIN_POSITIVE
    } else {
        u
    }
}

/// The shared secret both roles start from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedMaterial {
    pub root_seed: u64,
    pub run_id: String,
}

/// Independent families of draws derived from one root seed. The quantizer
/// family uses the root seed unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Quantizer,
    ClientSampling,
    Batch,
    GaussianNoise,
    StochasticRounding,
    Data,
    Init,
}

impl Purpose {
    fn salt(self) -> u64 {
        match self {
            Purpose::Quantizer => 0,
            Purpose::ClientSampling => 1,
            Purpose::Batch => 2,
            Purpose::GaussianNoise => 3,
            Purpose::StochasticRounding => 4,
            Purpose::Data => 5,
            Purpose::Init => 6,
        }
    }
}

impl SeedMaterial {
    pub fn new(root_seed: u64, run_id: impl Into<String>) -> Self {
        Self {
            root_seed,
            run_id: run_id.into(),
        }
    }

    /// Seed material for a derived stream family.
    pub fn for_purpose(&self, purpose: Purpose) -> SeedMaterial {
        match purpose {
            Purpose::Quantizer => self.clone(),
            other => SeedMaterial {
                root_seed: absorb(mix64(self.root_seed ^ 0x5eed_5eed_5eed_5eed), other.salt()),
                run_id: self.run_id.clone(),
            },
        }
    }
}

impl fmt::Display for SeedMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seed={} run={}", self.root_seed, self.run_id)
    }
}

impl FromStr for SeedMaterial {
    type Err = Error;

    /// Accepts `seed=<u64> run=<token>`; fields may be separated by
    /// whitespace or commas and appear in either order.
    fn from_str(s: &str) -> Result<Self> {
        let mut seed = None;
        let mut run = None;
        for token in s.split(|c: char| c == ',' || c.is_whitespace()) {
            if token.is_empty() {
                continue;
            }
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, found `{token}`")))?;
            match key {
                "seed" => {
                    let parsed = value
                        .parse::<u64>()
                        .map_err(|e| Error::Config(format!("seed `{value}`: {e}")))?;
                    if seed.replace(parsed).is_some() {
                        return Err(Error::Config("seed given twice".into()));
                    }
                }
                "run" => {
                    if value.is_empty() {
                        return Err(Error::Config("empty run label".into()));
                    }
                    if run.replace(value.to_string()).is_some() {
                        return Err(Error::Config("run given twice".into()));
                    }
                }
                other => return Err(Error::Config(format!("unknown seed field `{other}`"))),
            }
        }
        let root_seed = seed.ok_or_else(|| Error::Config("missing `seed` field".into()))?;
        Ok(SeedMaterial {
            root_seed,
            run_id: run.unwrap_or_else(|| "default".to_string()),
        })
    }
}

/// Reads the one-line seed file both orchestrator roles share.
pub fn seed_handshake(path: &std::path::Path) -> Result<SeedMaterial> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .ok_or_else(|| Error::Config(format!("{}: no seed line", path.display())))?;
    line.parse()
}

/// Addresses one pair of uniforms inside a seed's stream space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StreamCursor {
    pub client_id: u64,
    pub round: u64,
    pub element_index: u64,
    pub draw_counter: u64,
}

impl StreamCursor {
    pub fn new(client_id: u64, round: u64, element_index: u64, draw_counter: u64) -> Self {
        Self {
            client_id,
            round,
            element_index,
            draw_counter,
        }
    }
}

#[inline]
fn element_key(root_seed: u64, client_id: u64, round: u64, element_index: u64) -> u64 {
    let h = absorb(mix64(root_seed ^ GOLDEN_GAMMA), client_id);
    let h = absorb(h, round);
    absorb(h, element_index)
}

#[inline]
fn pair_from_key(key: u64, draw_counter: u64) -> (f64, f64) {
    let c0 = draw_counter.wrapping_mul(2);
    let w0 = absorb(key, c0);
    let w1 = absorb(key, c0.wrapping_add(1));
    (word_to_unit(w0), word_to_unit(w1))
}

/// Two uniforms in (0, 1) for the given cursor. Pure.
pub fn derive_uniform_pair(seed: &SeedMaterial, cursor: StreamCursor) -> (f64, f64) {
    let key = element_key(
        seed.root_seed,
        cursor.client_id,
        cursor.round,
        cursor.element_index,
    );
    pair_from_key(key, cursor.draw_counter)
}

/// Uniform pairs for elements `0..dim` of one (client, round) stream, one
/// pair per element at draw counter zero.
pub fn element_pairs(seed: &SeedMaterial, client_id: u64, round: u64, dim: usize) -> Vec<(f64, f64)> {
    (0..dim as u64)
        .map(|j| derive_uniform_pair(seed, StreamCursor::new(client_id, round, j, 0)))
        .collect()
}

/// Sequential reader over one (client, round) stream. Advancing the cursor's
/// draw counter is the only state change.
#[derive(Debug, Clone)]
pub struct StreamRng {
    key: u64,
    draw_counter: u64,
    spare: Option<f64>,
}

impl StreamRng {
    pub fn new(seed: &SeedMaterial, client_id: u64, round: u64) -> Self {
        Self {
            key: element_key(seed.root_seed, client_id, round, 0),
            draw_counter: 0,
            spare: None,
        }
    }

    pub fn next_pair(&mut self) -> (f64, f64) {
        let pair = pair_from_key(self.key, self.draw_counter);
        self.draw_counter += 1;
        pair
    }

    pub fn next_uniform(&mut self) -> f64 {
        if let Some(u) = self.spare.take() {
            return u;
        }
        let (a, b) = self.next_pair();
        self.spare = Some(b);
        a
    }

    pub fn next_standard_normal(&mut self) -> f64 {
        inverse_normal_cdf(self.next_uniform())
    }

    /// Uniform integer in `0..n` (n > 0).
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let idx = (self.next_uniform() * n as f64) as usize;
        idx.min(n - 1)
    }

    pub fn draws_consumed(&self) -> u64 {
        self.draw_counter
    }
}
