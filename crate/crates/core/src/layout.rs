//! Key-derived partition of the flat parameter vector into power-of-two
//! transform blocks.
//!
//! Block sizes are fixed by `n_p` and `max_block` (full blocks plus the
//! binary decomposition of the remainder); their order is shuffled under
//! the block-shuffle seed. Parameters are then dealt into the concatenated
//! block slots through a Fisher-Yates permutation under the param-assign
//! seed.

use crate::error::{Error, Result};
use crate::fwht::CoeffBlock;
use crate::keys::{seed_for, RandomStream, SeedLabel, SeedValue, WatermarkKey};

pub const DEFAULT_MAX_BLOCK: usize = 2048;

pub fn plan_blocks(n_params: usize, max_block: usize, seed: &SeedValue) -> Result<Vec<usize>> {
    if n_params == 0 {
        return Err(Error::InvalidArgument("cannot lay out zero parameters".into()));
    }
    check_max_block(max_block)?;
    let mut sizes = vec![max_block; n_params / max_block];
    let rem = n_params % max_block;
    sizes.extend(
        (0..usize::BITS)
            .rev()
            .map(|b| 1usize << b)
            .filter(|&p| rem & p != 0),
    );
    RandomStream::new(seed).shuffle(&mut sizes);
    Ok(sizes)
}

fn check_max_block(max_block: usize) -> Result<()> {
    if max_block == 0 || !max_block.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "max block size {max_block} is not a power of two"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    n_params: usize,
    max_block: usize,
    block_sizes: Vec<usize>,
    /// Start slot of each block, plus a final sentinel equal to `n_params`.
    offsets: Vec<usize>,
    /// `slot_to_flat[s]` is the flat parameter index stored in slot `s`.
    slot_to_flat: Vec<usize>,
    flat_to_slot: Vec<usize>,
}

impl BlockLayout {
    pub fn build(n_params: usize, max_block: usize, key: &WatermarkKey) -> Result<Self> {
        let sizes = plan_blocks(n_params, max_block, &seed_for(key, SeedLabel::BlockShuffle))?;
        let mut slot_to_flat: Vec<usize> = (0..n_params).collect();
        RandomStream::new(&seed_for(key, SeedLabel::ParamAssign)).shuffle(&mut slot_to_flat);
        Self::from_parts(max_block, sizes, slot_to_flat)
    }

    /// Layout from explicit block sizes and slot assignment.
    pub fn from_parts(max_block: usize, block_sizes: Vec<usize>, slot_to_flat: Vec<usize>) -> Result<Self> {
        check_max_block(max_block)?;
        let n_params = slot_to_flat.len();
        if let Some(&bad) = block_sizes
            .iter()
            .find(|&&s| !s.is_power_of_two() || s > max_block)
        {
            return Err(Error::InvalidArgument(format!(
                "block size {bad} is not a power of two no larger than {max_block}"
            )));
        }
        let total: usize = block_sizes.iter().sum();
        if total != n_params {
            return Err(Error::LengthMismatch {
                expected: n_params,
                actual: total,
            });
        }
        let mut flat_to_slot = vec![usize::MAX; n_params];
        for (slot, &flat) in slot_to_flat.iter().enumerate() {
            if flat >= n_params || flat_to_slot[flat] != usize::MAX {
                return Err(Error::InvalidArgument("slot assignment is not a permutation".into()));
            }
            flat_to_slot[flat] = slot;
        }
        let mut offsets = Vec::with_capacity(block_sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &s in &block_sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self {
            n_params,
            max_block,
            block_sizes,
            offsets,
            slot_to_flat,
            flat_to_slot,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn max_block(&self) -> usize {
        self.max_block
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn num_blocks(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn block_range(&self, block: usize) -> std::ops::Range<usize> {
        self.offsets[block]..self.offsets[block + 1]
    }

    pub fn slot_to_flat(&self) -> &[usize] {
        &self.slot_to_flat
    }

    pub fn slot_of(&self, flat_index: usize) -> usize {
        self.flat_to_slot[flat_index]
    }

    /// Block and offset within the block of a global slot index.
    pub fn locate(&self, slot: usize) -> (usize, usize) {
        debug_assert!(slot < self.n_params);
        let block = self.offsets.partition_point(|&o| o <= slot) - 1;
        (block, slot - self.offsets[block])
    }

    pub fn block_of_flat(&self, flat_index: usize) -> usize {
        self.locate(self.flat_to_slot[flat_index]).0
    }

    pub fn gather(&self, flat: &[f64]) -> Result<Vec<CoeffBlock>> {
        if flat.len() != self.n_params {
            return Err(Error::LengthMismatch {
                expected: self.n_params,
                actual: flat.len(),
            });
        }
        Ok((0..self.num_blocks())
            .map(|b| {
                let values = self.slot_to_flat[self.block_range(b)]
                    .iter()
                    .map(|&i| flat[i])
                    .collect();
                CoeffBlock::parameters(values)
            })
            .collect())
    }

    pub fn scatter(&self, blocks: &[CoeffBlock]) -> Result<Vec<f64>> {
        if blocks.len() != self.num_blocks() {
            return Err(Error::LengthMismatch {
                expected: self.num_blocks(),
                actual: blocks.len(),
            });
        }
        let mut flat = vec![0.0; self.n_params];
        for (b, block) in blocks.iter().enumerate() {
            let range = self.block_range(b);
            if block.len() != range.len() {
                return Err(Error::LengthMismatch {
                    expected: range.len(),
                    actual: block.len(),
                });
            }
            for (&i, &v) in self.slot_to_flat[range].iter().zip(&block.values) {
                flat[i] = v;
            }
        }
        Ok(flat)
    }
}
