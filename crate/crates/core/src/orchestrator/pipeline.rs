use crate::coupled_prng::{element_pairs, Purpose, SeedMaterial, StreamRng};
use crate::error::{invalid_param, Error, Result};
use crate::gau_lrq::{bits_for_inf_norm, stochastic_quantize_levels, GauLrqCodec, StochasticQuantized, StreamTag, MAX_STOCHASTIC_BITS};

use super::wire::{Payload, WireHeader, WireMessage, FLOAT_BITS};
use super::AlgorithmKind;

/// Client-side result of encoding one update.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedUpload {
    pub message: WireMessage,
    pub clamp_count: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn header(algorithm: AlgorithmKind, client: u32, round: u32, dim: usize, bits: u32) -> Result<WireHeader> {
    Ok(WireHeader {
        client_id: client,
        round,
        dim: u32::try_from(dim).map_err(|_| invalid_param(format!("dimension {dim} exceeds u32")))?,
        bits_per_element: bits as u8,
        algorithm,
    })
}

/// Client pipeline after clipping: noise and/or quantization per algorithm,
/// then framing. `update` is the clipped update (raw for LocalSGD).
pub fn encode_update(
    algorithm: AlgorithmKind,
    update: &[f64],
    sigma: f64,
    seed: &SeedMaterial,
    client: u32,
    round: u32,
) -> Result<EncodedUpload> {
    if let Some(bad) = update.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("client {client}: non-finite update element {bad}")));
    }
    let dim = update.len();
    let noisy = |purpose| {
        let mut rng = StreamRng::new(&seed.for_purpose(purpose), client as u64, round as u64);
        update
            .iter()
            .map(|u| u + sigma * rng.next_standard_normal())
            .collect::<Vec<f64>>()
    };
    let (message, clamp_count) = match algorithm {
        AlgorithmKind::LocalSgd => (
            WireMessage {
                header: header(algorithm, client, round, dim, FLOAT_BITS as u32)?,
                payload: Payload::Float(update.iter().map(|&v| v as f32).collect()),
            },
            0,
        ),
        AlgorithmKind::GauSgd => (
            WireMessage {
                header: header(algorithm, client, round, dim, FLOAT_BITS as u32)?,
                payload: Payload::Float(noisy(Purpose::GaussianNoise).iter().map(|&v| v as f32).collect()),
            },
            0,
        ),
        AlgorithmKind::QgSgd => {
            let bits = bits_for_inf_norm(inf_norm(update), sigma)?;
            if bits > MAX_STOCHASTIC_BITS {
                return Err(invalid_param(format!("stochastic quantizer width {bits} exceeds {MAX_STOCHASTIC_BITS}")));
            }
            let private = noisy(Purpose::GaussianNoise);
            let mut rng = StreamRng::new(&seed.for_purpose(Purpose::StochasticRounding), client as u64, round as u64);
            let uniforms: Vec<f64> = (0..dim).map(|_| rng.next_uniform()).collect();
            let q = stochastic_quantize_levels(&private, bits, &uniforms)?;
            let half = 1i64 << (bits - 1);
            (
                WireMessage {
                    header: header(algorithm, client, round, dim, bits)?,
                    payload: Payload::ScaledIndices {
                        scale: q.scale,
                        indices: q.levels.iter().map(|&l| l as i64 - half).collect(),
                    },
                },
                0,
            )
        }
        AlgorithmKind::GauLrqSgd | AlgorithmKind::DynamicGauLrqSgd => {
            let codec = GauLrqCodec::new(sigma)?;
            let pairs = element_pairs(&seed.for_purpose(Purpose::Quantizer), client as u64, round as u64, dim);
            let tag = StreamTag { client_id: client, round };
            let enc = codec.quantize_vector(update, &pairs, tag)?;
            (
                WireMessage {
                    header: header(algorithm, client, round, dim, enc.bits_per_element)?,
                    payload: Payload::Indices(enc.indices),
                },
                enc.clamp_count,
            )
        }
    };
    Ok(EncodedUpload { message, clamp_count })
}

/// Server-side reconstruction `Δ̂` of one upload. Gau-LRQ regenerates the
/// client's layers from the shared seed and the header's (client, round).
pub fn decode_update(message: &WireMessage, sigma: f64, seed: &SeedMaterial) -> Result<Vec<f64>> {
    let h = &message.header;
    match (&message.payload, h.algorithm) {
        (Payload::Float(v), AlgorithmKind::LocalSgd | AlgorithmKind::GauSgd) => Ok(v.iter().map(|&x| x as f64).collect()),
        (Payload::ScaledIndices { scale, indices }, AlgorithmKind::QgSgd) => {
            let bits = h.bits_per_element as u32;
            if bits == 0 || bits > MAX_STOCHASTIC_BITS {
                return Err(Error::Wire(format!("invalid stochastic width {bits}")));
            }
            let half = 1i64 << (bits - 1);
            let levels = indices.iter().map(|&i| (i + half) as u64).collect();
            let q = StochasticQuantized {
                scale: *scale,
                bits,
                levels,
            };
            Ok(q.values())
        }
        (Payload::Indices(indices), AlgorithmKind::GauLrqSgd | AlgorithmKind::DynamicGauLrqSgd) => {
            let codec = GauLrqCodec::new(sigma)?;
            let pairs = element_pairs(&seed.for_purpose(Purpose::Quantizer), h.client_id as u64, h.round as u64, indices.len());
            codec.dequantize(indices, &pairs)
        }
        _ => Err(Error::Wire(format!("payload does not match algorithm {:?}", h.algorithm))),
    }
}
