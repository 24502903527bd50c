//! Embedding, extraction and verification.
//!
//! The hidden message is framed as
//! `u32 LE payload length || payload || SHA-256(length || payload)`, each byte
//! written most-significant bit first. Message bit `i` goes to plan position
//! `i`. A model verifies when the recovered digest matches the recovered
//! content.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{
    deintegerize, integerize, magnitude_bit, select_exponent, stabilize_exponent,
    with_magnitude_bit, IntCoeffBlock, DEFAULT_SIG_FIGS, MAX_SIG_FIGS,
};
use crate::container::{flatten, restore, ParameterSet};
use crate::error::{Error, Result};
use crate::fwht::{fwht, CoeffBlock};
use crate::keys::{seed_for, SeedLabel, WatermarkKey};
use crate::layout::{BlockLayout, DEFAULT_MAX_BLOCK};
use crate::plan::{build_plan, capacity, BitPosition, PlanSampler, DEFAULT_LSB_BITS, FRAME_OVERHEAD_BITS, MAX_LSB_BITS};

pub const PROTOCOL_VERSION: u32 = 1;

const LENGTH_BITS: usize = 32;
const DIGEST_BITS: usize = 256;

/// Protocol parameters. The verifier must supply the same values used at
/// embed time; nothing here is stored in the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WatermarkConfig {
    pub lsb_bits: u8,
    pub sig_figs: u32,
    pub max_block: usize,
    pub protocol_version: u32,
}

impl Default for WatermarkConfig {
    fn default() -> Self {
        Self {
            lsb_bits: DEFAULT_LSB_BITS,
            sig_figs: DEFAULT_SIG_FIGS,
            max_block: DEFAULT_MAX_BLOCK,
            protocol_version: PROTOCOL_VERSION,
        }
    }
}

impl WatermarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lsb_bits == 0 || self.lsb_bits > MAX_LSB_BITS {
            return Err(Error::InvalidArgument(format!(
                "lsb bits must be in 1..={MAX_LSB_BITS}, got {}",
                self.lsb_bits
            )));
        }
        if self.sig_figs == 0 || self.sig_figs > MAX_SIG_FIGS {
            return Err(Error::InvalidArgument(format!(
                "significant figures must be in 1..={MAX_SIG_FIGS}, got {}",
                self.sig_figs
            )));
        }
        if self.max_block == 0 || !self.max_block.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "max block {} is not a power of two",
                self.max_block
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bitstream {
    bits: Vec<bool>,
}

impl Bitstream {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Expands bytes most-significant bit first.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut bits = Vec::with_capacity(bytes.len() * 8);
        append_bytes(&mut bits, bytes);
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Splits a framed stream into `(declared length, payload, digest)`.
    /// `None` when the stream is shorter than its length field claims.
    pub fn parse_frame(&self) -> Option<(u32, Vec<u8>, [u8; 32])> {
        if self.bits.len() < LENGTH_BITS + DIGEST_BITS {
            return None;
        }
        let len_bytes = pack_bits(&self.bits[..LENGTH_BITS]);
        let len = u32::from_le_bytes(len_bytes.try_into().unwrap());
        let payload_end = LENGTH_BITS + 8 * len as usize;
        if self.bits.len() != payload_end + DIGEST_BITS {
            return None;
        }
        let payload = pack_bits(&self.bits[LENGTH_BITS..payload_end]);
        let digest = pack_bits(&self.bits[payload_end..]).try_into().unwrap();
        Some((len, payload, digest))
    }
}

fn append_bytes(bits: &mut Vec<bool>, bytes: &[u8]) {
    for &byte in bytes {
        bits.extend((0..8).rev().map(|i| (byte >> i) & 1 == 1));
    }
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|chunk| chunk.iter().fold(0u8, |acc, &b| (acc << 1) | u8::from(b)))
        .collect()
}

fn frame_digest(len: u32, payload: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(len.to_le_bytes());
    hasher.update(payload);
    hasher.finalize().into()
}

pub fn frame_payload(payload: &[u8]) -> Result<Bitstream> {
    let len = u32::try_from(payload.len()).map_err(|_| {
        Error::InvalidArgument(format!("payload of {} bytes exceeds the u32 length field", payload.len()))
    })?;
    let mut bits = Vec::with_capacity(FRAME_OVERHEAD_BITS as usize + 8 * payload.len());
    append_bytes(&mut bits, &len.to_le_bytes());
    append_bytes(&mut bits, payload);
    append_bytes(&mut bits, &frame_digest(len, payload));
    Ok(Bitstream { bits })
}

/// Fraction of positions where the two streams differ.
pub fn ber(a: &Bitstream, b: &Bitstream) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let diff = a.bits.iter().zip(&b.bits).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / a.len() as f64)
}

/// Per-block record of an embed run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockEmbedding {
    /// Final decimal exponent, or `None` for blocks that carry no bits and
    /// were left untouched.
    pub exponent: Option<i32>,
    pub hidden_bits: usize,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct EmbedOutcome {
    pub set: ParameterSet,
    pub layout: BlockLayout,
    pub blocks: Vec<BlockEmbedding>,
    pub hidden_bits: u64,
}

pub fn embed(set: &ParameterSet, key: &WatermarkKey, payload: &[u8], cfg: &WatermarkConfig) -> Result<ParameterSet> {
    Ok(embed_bits(set, key, &frame_payload(payload)?, cfg)?.set)
}

/// Hides an arbitrary bit sequence. The returned set stores every tensor as
/// f64.
pub fn embed_bits(set: &ParameterSet, key: &WatermarkKey, message: &Bitstream, cfg: &WatermarkConfig) -> Result<EmbedOutcome> {
    cfg.validate()?;
    if cfg.protocol_version != PROTOCOL_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported protocol version {}",
            cfg.protocol_version
        )));
    }
    let (flat, manifest) = flatten(set)?;
    let n_params = flat.len();
    let cap = capacity(n_params, cfg.lsb_bits);
    if message.len() as u64 > cap {
        return Err(Error::CapacityExceeded {
            required: message.len() as u64,
            capacity: cap,
        });
    }

    let layout = BlockLayout::build(n_params, cfg.max_block, key)?;
    let plan = build_plan(message.len() as u64, n_params, cfg.lsb_bits, &seed_for(key, SeedLabel::BitAssign))?;

    let mut writes: Vec<Vec<(usize, u32, bool)>> = vec![Vec::new(); layout.num_blocks()];
    for (pos, &bit) in plan.positions.iter().zip(message.bits()) {
        let (block, offset) = layout.locate(pos.coeff_index);
        writes[block].push((offset, u32::from(pos.bit_index), bit));
    }

    let sig_figs = cfg.sig_figs;
    let embedded = layout
        .gather(&flat)?
        .into_par_iter()
        .zip(writes.par_iter())
        .map(|(block, block_writes)| {
            if block_writes.is_empty() {
                let record = BlockEmbedding {
                    exponent: None,
                    hidden_bits: 0,
                    iterations: 0,
                };
                return Ok((block, record));
            }
            let coeffs = fwht(&block)?;
            let initial = select_exponent(&coeffs.values, sig_figs)?;
            let hide = |ints: &mut [i64]| {
                for &(offset, bit, value) in block_writes {
                    ints[offset] = with_magnitude_bit(ints[offset], bit, value);
                }
            };
            let stabilized = stabilize_exponent(&coeffs.values, sig_figs, initial, hide)?;
            let params = fwht(&CoeffBlock::coefficients(deintegerize(&stabilized.block)))?;
            let record = BlockEmbedding {
                exponent: Some(stabilized.block.exponent),
                hidden_bits: block_writes.len(),
                iterations: stabilized.iterations,
            };
            Ok((params, record))
        })
        .collect::<Result<Vec<_>>>()?;

    let (blocks, records): (Vec<CoeffBlock>, Vec<BlockEmbedding>) = embedded.into_iter().unzip();
    let out = restore(&layout.scatter(&blocks)?, &manifest)?;
    Ok(EmbedOutcome {
        set: out,
        layout,
        blocks: records,
        hidden_bits: message.len() as u64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub verified: bool,
    /// Declared payload length in bytes, when the length field was readable.
    pub payload_length: Option<u32>,
    #[serde(with = "hex_bytes")]
    pub payload: Option<Vec<u8>>,
    pub ber: Option<f64>,
    pub hidden_bit_count: u64,
    pub config: WatermarkConfig,
    pub diagnostic: Option<String>,
}

impl VerificationReport {
    fn failed(cfg: &WatermarkConfig, diagnostic: impl Into<String>) -> Self {
        Self {
            verified: false,
            payload_length: None,
            payload: None,
            ber: None,
            hidden_bit_count: 0,
            config: *cfg,
            diagnostic: Some(diagnostic.into()),
        }
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(bytes) => s.serialize_some(&hex::encode(bytes)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|h| hex::decode(h).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Lazily integerized coefficients of a watermarked model.
struct CoeffReader<'a> {
    layout: &'a BlockLayout,
    blocks: Vec<CoeffBlock>,
    ints: Vec<Option<IntCoeffBlock>>,
    sig_figs: u32,
}

impl<'a> CoeffReader<'a> {
    fn new(layout: &'a BlockLayout, flat: &[f64], sig_figs: u32) -> Result<Self> {
        let blocks = layout.gather(flat)?;
        let ints = vec![None; blocks.len()];
        Ok(Self {
            layout,
            blocks,
            ints,
            sig_figs,
        })
    }

    fn read(&mut self, positions: &[BitPosition]) -> Result<Vec<bool>> {
        let mut missing: Vec<usize> = positions
            .iter()
            .map(|p| self.layout.locate(p.coeff_index).0)
            .filter(|&b| self.ints[b].is_none())
            .collect();
        missing.sort_unstable();
        missing.dedup();
        let sig_figs = self.sig_figs;
        let blocks = &self.blocks;
        let computed = missing
            .par_iter()
            .map(|&b| {
                let coeffs = fwht(&blocks[b])?;
                let d = select_exponent(&coeffs.values, sig_figs)?;
                integerize(&coeffs.values, d)
            })
            .collect::<Result<Vec<_>>>()?;
        for (b, ints) in missing.into_iter().zip(computed) {
            self.ints[b] = Some(ints);
        }
        Ok(positions
            .iter()
            .map(|p| {
                let (b, off) = self.layout.locate(p.coeff_index);
                let ints = self.ints[b].as_ref().expect("block integerized above");
                magnitude_bit(ints.ints[off], u32::from(p.bit_index))
            })
            .collect())
    }
}

/// Reads the hidden message back and checks its digest. When `reference` is
/// given, the bits at the reference's plan positions are compared to it.
///
/// Tampered or foreign models produce `verified == false` with a diagnostic;
/// only an invalid `cfg` is an error.
pub fn extract(
    set: &ParameterSet,
    key: &WatermarkKey,
    cfg: &WatermarkConfig,
    reference: Option<&Bitstream>,
) -> Result<VerificationReport> {
    cfg.validate()?;
    if cfg.protocol_version != PROTOCOL_VERSION {
        return Ok(VerificationReport::failed(
            cfg,
            format!("unsupported protocol version {}", cfg.protocol_version),
        ));
    }
    match extract_inner(set, key, cfg, reference) {
        Ok(report) => Ok(report),
        Err(e) => Ok(VerificationReport::failed(cfg, e.to_string())),
    }
}

fn extract_inner(
    set: &ParameterSet,
    key: &WatermarkKey,
    cfg: &WatermarkConfig,
    reference: Option<&Bitstream>,
) -> Result<VerificationReport> {
    let (flat, _) = flatten(set)?;
    let n_params = flat.len();
    let cap = capacity(n_params, cfg.lsb_bits);
    if cap < FRAME_OVERHEAD_BITS {
        return Ok(VerificationReport::failed(
            cfg,
            format!("model capacity of {cap} bits cannot hold a framed message"),
        ));
    }

    let layout = BlockLayout::build(n_params, cfg.max_block, key)?;
    let mut sampler = PlanSampler::new(n_params, cfg.lsb_bits, &seed_for(key, SeedLabel::BitAssign))?;
    let mut reader = CoeffReader::new(&layout, &flat, cfg.sig_figs)?;

    let mut positions = Vec::new();
    sampler.extend(&mut positions, LENGTH_BITS as u64)?;
    let mut bits = reader.read(&positions)?;
    let declared = u32::from_le_bytes(pack_bits(&bits).try_into().unwrap());
    let framed_len = FRAME_OVERHEAD_BITS + 8 * u64::from(declared);
    let plausible = framed_len <= cap;

    let ref_len = reference.map_or(0, |r| r.len() as u64);
    if ref_len > cap {
        return Err(Error::CapacityExceeded {
            required: ref_len,
            capacity: cap,
        });
    }
    let wanted = if plausible { framed_len.max(ref_len) } else { ref_len.max(LENGTH_BITS as u64) };
    let start = positions.len();
    sampler.extend(&mut positions, wanted - start as u64)?;
    bits.extend(reader.read(&positions[start..])?);

    let ber_value = match reference {
        Some(r) => Some(ber(r, &Bitstream::from_bits(bits[..r.len()].to_vec()))?),
        None => None,
    };

    if !plausible {
        return Ok(VerificationReport {
            verified: false,
            payload_length: Some(declared),
            payload: None,
            ber: ber_value,
            hidden_bit_count: LENGTH_BITS as u64,
            config: *cfg,
            diagnostic: Some(format!(
                "declared payload of {declared} bytes needs {framed_len} bits, capacity is {cap}"
            )),
        });
    }

    let framed = Bitstream::from_bits(bits[..framed_len as usize].to_vec());
    let (len, payload, digest) = framed
        .parse_frame()
        .expect("frame length derived from its own header");
    let verified = frame_digest(len, &payload) == digest;
    Ok(VerificationReport {
        verified,
        payload_length: Some(len),
        payload: Some(payload),
        ber: ber_value,
        hidden_bit_count: framed_len,
        config: *cfg,
        diagnostic: (!verified).then(|| "recovered digest does not match recovered payload".to_owned()),
    })
}
