//! Position map stored in a chain of smaller ORAM trees.
//!
//! Addresses `0..n` index data-block leaves. Level 0 packs `chi` leaves per
//! block, level `i+1` packs the leaves of level-`i` blocks, and the last
//! level's leaves live in a plain array small enough for the memory budget.
//! A lookup walks the chain top-down with one ORAM access per level and
//! remaps every block it touches.

use rand::{Rng, RngCore};
use rand_chacha::ChaCha20Rng;

use crate::crypto::Ske;
use crate::error::{Error, Result};
use crate::oram::{build_tree, tree_depth, BlockId, PathStore, PlainBlock, ServerTree, SlotLayout, TreeOram};

/// Stored in place of a leaf for addresses with no data block.
pub const ABSENT: u64 = u64::MAX;
pub const DEFAULT_CHI: usize = 64;
const ENTRY_BYTES: usize = 8;

/// Dense address for the ordered pair `(u, v)` over a `|V|^2` space.
pub fn pair_address(u: u32, v: u32, vertex_count: usize) -> u64 {
    u as u64 * vertex_count as u64 + v as u64
}

pub fn position_layout(chi: usize) -> SlotLayout {
    SlotLayout { payload_width: chi * ENTRY_BYTES }
}

fn read_entry(payload: &[u8], slot: usize) -> u64 {
    u64::from_be_bytes(payload[slot * ENTRY_BYTES..(slot + 1) * ENTRY_BYTES].try_into().unwrap())
}

fn write_entry(payload: &mut [u8], slot: usize, value: u64) {
    payload[slot * ENTRY_BYTES..(slot + 1) * ENTRY_BYTES].copy_from_slice(&value.to_be_bytes());
}

/// Result of one chain lookup: the data leaf before and after remapping.
/// `old` is `None` for absent addresses, whose stored marker stays absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Remap {
    pub old: Option<u64>,
    pub new: u64,
}

/// Knobs for [`rpm_build`].
#[derive(Debug, Clone, Copy)]
pub struct ChainConfig {
    pub chi: usize,
    pub budget: usize,
    pub z: usize,
    pub stash_max: usize,
}

/// A level's tree before it is attached to storage.
pub struct BuiltLevel {
    pub tree: ServerTree,
    pub stash: crate::oram::Stash,
}

/// Position levels plus the resident top array, not yet bound to storage.
pub struct BuiltChain {
    pub levels: Vec<BuiltLevel>,
    pub top: Vec<u64>,
}

/// Packs `assignments` (address -> data leaf, [`ABSENT`] where none) into
/// levels until the top array fits `budget` bytes.
pub fn rpm_build<R: RngCore + rand::CryptoRng>(
    assignments: Vec<u64>,
    cfg: ChainConfig,
    cipher: &Ske,
    rng: &mut R,
) -> Result<BuiltChain> {
    if cfg.chi < 2 {
        return Err(Error::Config(format!("packing factor must be at least 2, got {}", cfg.chi)));
    }
    if cfg.budget < ENTRY_BYTES {
        return Err(Error::Config(format!(
            "budget of {} bytes cannot hold a single position entry",
            cfg.budget
        )));
    }
    let layout = position_layout(cfg.chi);
    let mut entries = assignments;
    let mut levels = Vec::new();
    while entries.len() * ENTRY_BYTES > cfg.budget {
        let count = entries.len().div_ceil(cfg.chi);
        let depth = tree_depth(count, cfg.z);
        let leaves = 1u64 << depth;
        let mut blocks = Vec::with_capacity(count);
        let mut next = Vec::with_capacity(count);
        for (idx, chunk) in entries.chunks(cfg.chi).enumerate() {
            let mut payload = vec![0u8; layout.payload_width];
            for slot in 0..cfg.chi {
                write_entry(&mut payload, slot, chunk.get(slot).copied().unwrap_or(ABSENT));
            }
            let leaf = rng.gen_range(0..leaves);
            blocks.push(PlainBlock { id: BlockId::from_address(idx as u64), payload, leaf });
            next.push(leaf);
        }
        let (tree, stash) = build_tree(blocks, depth, cfg.z, layout, cipher, cfg.stash_max, rng)?;
        levels.push(BuiltLevel { tree, stash });
        entries = next;
    }
    Ok(BuiltChain { levels, top: entries })
}

/// The recursive position map bound to storage.
pub struct RecursivePm<S> {
    chi: usize,
    data_leaves: u64,
    levels: Vec<TreeOram<S>>,
    top: Vec<u64>,
    rng: ChaCha20Rng,
}

impl<S: PathStore> RecursivePm<S> {
    /// `levels[i]` must hold level `i` of the chain. `data_leaves` is the
    /// leaf count of the data tree whose positions are stored.
    pub fn new(chi: usize, data_leaves: u64, levels: Vec<TreeOram<S>>, top: Vec<u64>, rng: ChaCha20Rng) -> Result<Self> {
        if chi < 2 {
            return Err(Error::Config("packing factor must be at least 2".into()));
        }
        if levels.iter().any(|l| l.layout() != position_layout(chi)) {
            return Err(Error::Config("level layout does not match packing factor".into()));
        }
        Ok(Self { chi, data_leaves, levels, top, rng })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn chi(&self) -> usize {
        self.chi
    }

    pub fn top(&self) -> &[u64] {
        &self.top
    }

    pub fn levels(&self) -> &[TreeOram<S>] {
        &self.levels
    }

    pub fn levels_mut(&mut self) -> &mut [TreeOram<S>] {
        &mut self.levels
    }

    pub fn into_parts(self) -> (Vec<TreeOram<S>>, Vec<u64>) {
        (self.levels, self.top)
    }

    /// Number of addresses covered.
    pub fn capacity(&self) -> u64 {
        self.top.len() as u64 * (self.chi as u64).pow(self.levels.len() as u32)
    }

    /// Bytes resident on the controller: the top array and every level stash.
    pub fn resident_bytes(&self) -> usize {
        self.top.len() * ENTRY_BYTES
            + self
                .levels
                .iter()
                .map(|l| l.stash().len() * l.layout().plain_width())
                .sum::<usize>()
    }

    /// Largest plaintext block held by any level.
    pub fn block_bytes(&self) -> usize {
        if self.levels.is_empty() {
            0
        } else {
            position_layout(self.chi).plain_width()
        }
    }

    /// Returns the current data leaf for `address` and installs a fresh
    /// uniform one, touching one path in every level whether or not the
    /// address holds a block.
    pub fn get_and_remap(&mut self, address: u64) -> Result<Remap> {
        if address >= self.capacity() {
            return Err(Error::Config(format!("address {address} outside position map")));
        }
        let new_data = self.rng.gen_range(0..self.data_leaves);
        let chi = self.chi as u64;

        if self.levels.is_empty() {
            let cell = &mut self.top[address as usize];
            let old = (*cell != ABSENT).then_some(*cell);
            if old.is_some() {
                *cell = new_data;
            }
            return Ok(Remap { old, new: new_data });
        }

        let depth = self.levels.len();
        // block index and slot of `address`'s entry at every level
        let mut index = vec![0u64; depth];
        let mut slot = vec![0usize; depth];
        let mut scaled = address;
        for i in 0..depth {
            slot[i] = (scaled % chi) as usize;
            scaled /= chi;
            index[i] = scaled;
        }

        let top_cell = index[depth - 1] as usize;
        let mut read_leaf = self.top[top_cell];
        let mut new_leaf = self.levels[depth - 1].random_leaf();
        self.top[top_cell] = new_leaf;

        let mut old = None;
        for i in (0..depth).rev() {
            let child_new = if i == 0 { new_data } else { self.levels[i - 1].random_leaf() };
            let s = slot[i];
            let before = self.levels[i]
                .access(Some(BlockId::from_address(index[i])), read_leaf, new_leaf, |payload| {
                    if i > 0 || read_entry(payload, s) != ABSENT {
                        write_entry(payload, s, child_new);
                    }
                })?
                .ok_or_else(|| Error::Integrity(format!("position block missing at level {i}")))?;
            let value = read_entry(&before, s);
            if i == 0 {
                old = (value != ABSENT).then_some(value);
            } else {
                read_leaf = value;
                new_leaf = child_new;
            }
        }
        Ok(Remap { old, new: new_data })
    }
}
