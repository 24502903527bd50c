//! Injective assignment of message bits to `(coefficient, bit slot)` pairs.
//!
//! The hiding space is `[0, n_p * l)`; position `p` addresses bit `p % l` of
//! coefficient `p / l`, where coefficients are numbered in block-slot order.
//! Positions are drawn uniformly under the bit-assign seed with rejection of
//! repeats, so the plan for `M` bits is always a prefix of the plan for any
//! larger `M`. Extraction relies on this to read the length field before it
//! knows how long the message is.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::keys::{RandomStream, SeedValue};

pub const DEFAULT_LSB_BITS: u8 = 4;
pub const MAX_LSB_BITS: u8 = 16;
pub const DEFAULT_DENSITY: f64 = 0.01;
/// Length field plus trailing digest.
pub const FRAME_OVERHEAD_BITS: u64 = 32 + 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BitPosition {
    pub coeff_index: usize,
    pub bit_index: u8,
}

pub fn capacity(n_params: usize, lsb_bits: u8) -> u64 {
    n_params as u64 * u64::from(lsb_bits)
}

/// Payload bits that fit in `floor(n_p * density)` hidden bits once framing
/// is paid for.
pub fn recommend_payload_bits(n_params: usize, density: f64, lsb_bits: u8) -> Result<u64> {
    if !(density > 0.0 && density <= f64::from(lsb_bits)) {
        return Err(Error::InvalidArgument(format!(
            "density {density} must lie in (0, {lsb_bits}]"
        )));
    }
    let budget = (n_params as f64 * density).floor() as u64;
    Ok(budget.saturating_sub(FRAME_OVERHEAD_BITS))
}

/// Incremental position sampler.
#[derive(Clone, Debug)]
pub struct PlanSampler {
    rng: RandomStream,
    seen: HashSet<u64>,
    space: u64,
    lsb_bits: u8,
}

impl PlanSampler {
    pub fn new(n_params: usize, lsb_bits: u8, seed: &SeedValue) -> Result<Self> {
        if lsb_bits == 0 || lsb_bits > MAX_LSB_BITS {
            return Err(Error::InvalidArgument(format!(
                "lsb bits must be in 1..={MAX_LSB_BITS}, got {lsb_bits}"
            )));
        }
        Ok(Self {
            rng: RandomStream::new(seed),
            seen: HashSet::new(),
            space: capacity(n_params, lsb_bits),
            lsb_bits,
        })
    }

    pub fn drawn(&self) -> u64 {
        self.seen.len() as u64
    }

    pub fn space(&self) -> u64 {
        self.space
    }

    /// Next unused position, or `None` once the space is exhausted.
    pub fn next_position(&mut self) -> Option<BitPosition> {
        if self.drawn() >= self.space {
            return None;
        }
        loop {
            let p = self.rng.below(self.space);
            if self.seen.insert(p) {
                let l = u64::from(self.lsb_bits);
                return Some(BitPosition {
                    coeff_index: (p / l) as usize,
                    bit_index: (p % l) as u8,
                });
            }
        }
    }

    pub fn extend(&mut self, plan: &mut Vec<BitPosition>, count: u64) -> Result<()> {
        let required = self.drawn() + count;
        if required > self.space {
            return Err(Error::CapacityExceeded {
                required,
                capacity: self.space,
            });
        }
        plan.reserve(count as usize);
        for _ in 0..count {
            plan.push(self.next_position().expect("capacity checked above"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HidingPlan {
    pub positions: Vec<BitPosition>,
    pub lsb_bits: u8,
    pub n_params: usize,
}

impl HidingPlan {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn build_plan(message_bits: u64, n_params: usize, lsb_bits: u8, seed: &SeedValue) -> Result<HidingPlan> {
    let cap = capacity(n_params, lsb_bits);
    if message_bits > cap {
        return Err(Error::CapacityExceeded {
            required: message_bits,
            capacity: cap,
        });
    }
    let mut sampler = PlanSampler::new(n_params, lsb_bits, seed)?;
    let mut positions = Vec::new();
    sampler.extend(&mut positions, message_bits)?;
    Ok(HidingPlan {
        positions,
        lsb_bits,
        n_params,
    })
}
