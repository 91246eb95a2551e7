//! Byte layout of a client upload.
//!
//! ```text
//! offset  size  field
//! 0       4     client_id          u32 LE
//! 4       4     round              u32 LE
//! 8       4     dim                u32 LE
//! 12      1     bits_per_element   u8
//! 13      1     algorithm tag      u8
//! 14      ..    payload
//! ```
//!
//! Float payloads are `dim` little-endian `f32`s. Index payloads are `dim`
//! two's-complement integers of `bits_per_element` bits packed LSB-first and
//! padded to a byte boundary. Scaled payloads prefix an `f64` scale.

use crate::error::{Error, Result};
use crate::gau_lrq::signed_range;

use super::AlgorithmKind;

pub const HEADER_LEN: usize = 14;
pub const FLOAT_BITS: u8 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireHeader {
    pub client_id: u32,
    pub round: u32,
    pub dim: u32,
    pub bits_per_element: u8,
    pub algorithm: AlgorithmKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Float(Vec<f32>),
    Indices(Vec<i64>),
    ScaledIndices { scale: f64, indices: Vec<i64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub header: WireHeader,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Float,
    Indices,
    Scaled,
}

fn layout(algorithm: AlgorithmKind) -> Layout {
    match algorithm {
        AlgorithmKind::LocalSgd | AlgorithmKind::GauSgd => Layout::Float,
        AlgorithmKind::QgSgd => Layout::Scaled,
        AlgorithmKind::GauLrqSgd | AlgorithmKind::DynamicGauLrqSgd => Layout::Indices,
    }
}

fn wire_err(msg: impl Into<String>) -> Error {
    Error::Wire(msg.into())
}

/// Packs signed values into `bits`-wide two's-complement fields, LSB-first.
pub fn pack_signed(values: &[i64], bits: u32) -> Result<Vec<u8>> {
    if !(1..=64).contains(&bits) {
        return Err(wire_err(format!("unsupported width {bits}")));
    }
    let (lo, hi) = signed_range(bits);
    let mut out = vec![0u8; (values.len() * bits as usize).div_ceil(8)];
    let mut pos = 0usize;
    for &v in values {
        if v < lo || v > hi {
            return Err(wire_err(format!("value {v} does not fit in {bits} bits")));
        }
        let raw = v as u64;
        for b in 0..bits as usize {
            if (raw >> b) & 1 == 1 {
                out[(pos + b) / 8] |= 1 << ((pos + b) % 8);
            }
        }
        pos += bits as usize;
    }
    Ok(out)
}

/// Inverse of [`pack_signed`].
pub fn unpack_signed(bytes: &[u8], count: usize, bits: u32) -> Result<Vec<i64>> {
    if !(1..=64).contains(&bits) {
        return Err(wire_err(format!("unsupported width {bits}")));
    }
    if bytes.len() != (count * bits as usize).div_ceil(8) {
        return Err(wire_err(format!(
            "payload holds {} bytes, expected {} for {count} x {bits} bits",
            bytes.len(),
            (count * bits as usize).div_ceil(8)
        )));
    }
    let mut pos = 0usize;
    let values = (0..count)
        .map(|_| {
            let mut raw = 0u64;
            for b in 0..bits as usize {
                let bit = (bytes[(pos + b) / 8] >> ((pos + b) % 8)) & 1;
                raw |= (bit as u64) << b;
            }
            pos += bits as usize;
            let shift = 64 - bits;
            ((raw << shift) as i64) >> shift
        })
        .collect();
    Ok(values)
}

impl WireMessage {
    /// Bits charged to the communication meter: `dim × bits_per_element`.
    /// Padding and the header are not charged.
    pub fn metered_bits(&self) -> u64 {
        self.header.dim as u64 * self.header.bits_per_element as u64
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + (h.dim as usize * h.bits_per_element as usize).div_ceil(8) + 8);
        out.extend_from_slice(&h.client_id.to_le_bytes());
        out.extend_from_slice(&h.round.to_le_bytes());
        out.extend_from_slice(&h.dim.to_le_bytes());
        out.push(h.bits_per_element);
        out.push(h.algorithm.tag());
        let expect_len = |n: usize| {
            if n == h.dim as usize {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    expected: h.dim as usize,
                    found: n,
                })
            }
        };
        match (&self.payload, layout(h.algorithm)) {
            (Payload::Float(values), Layout::Float) => {
                expect_len(values.len())?;
                if h.bits_per_element != FLOAT_BITS {
                    return Err(wire_err("float payloads use 32 bits per element"));
                }
                values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
            (Payload::Indices(indices), Layout::Indices) => {
                expect_len(indices.len())?;
                out.extend(pack_signed(indices, h.bits_per_element as u32)?);
            }
            (Payload::ScaledIndices { scale, indices }, Layout::Scaled) => {
                expect_len(indices.len())?;
                out.extend_from_slice(&scale.to_le_bytes());
                out.extend(pack_signed(indices, h.bits_per_element as u32)?);
            }
            _ => return Err(wire_err(format!("payload kind does not match {:?}", h.algorithm))),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(wire_err(format!("message of {} bytes is shorter than the header", bytes.len())));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let header = WireHeader {
            client_id: word(0),
            round: word(4),
            dim: word(8),
            bits_per_element: bytes[12],
            algorithm: AlgorithmKind::from_tag(bytes[13]).ok_or_else(|| wire_err(format!("unknown algorithm tag {}", bytes[13])))?,
        };
        let body = &bytes[HEADER_LEN..];
        let dim = header.dim as usize;
        let bits = header.bits_per_element as u32;
        let payload = match layout(header.algorithm) {
            Layout::Float => {
                if bits != FLOAT_BITS as u32 || body.len() != dim * 4 {
                    return Err(wire_err("malformed float payload"));
                }
                Payload::Float(
                    body.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                )
            }
            Layout::Indices => Payload::Indices(unpack_signed(body, dim, bits)?),
            Layout::Scaled => {
                if body.len() < 8 {
                    return Err(wire_err("scaled payload is missing its scale"));
                }
                let scale = f64::from_le_bytes(body[..8].try_into().expect("8 bytes"));
                Payload::ScaledIndices {
                    scale,
                    indices: unpack_signed(&body[8..], dim, bits)?,
                }
            }
        };
        Ok(Self { header, payload })
    }
}
