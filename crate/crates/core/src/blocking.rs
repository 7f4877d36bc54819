//! Block decomposition, isovalue span index and rectangular region merging.
//!
//! Blocks partition the *cell* grid. A block of size `b` at block coordinate
//! `(bx, by, bz)` owns the cells `[bx*b, min((bx+1)*b, n-1))` along each
//! axis, and its sample window carries one extra sample on each high face so
//! all eight corners of every owned cell are inside the window.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{extract_window, linear_index, value_range, Volume};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockMeta<T> {
    pub block_id: usize,
    pub block_coords: [usize; 3],
    pub sample_origin: [usize; 3],
    /// Sample counts including the high-face ghost layer.
    pub sample_extent: [usize; 3],
    pub vmin: T,
    pub vmax: T,
}

impl<T: Real> BlockMeta<T> {
    /// Closed span test `vmin <= k <= vmax`.
    pub fn spans(&self, k: T) -> bool {
        self.vmin <= k && k <= self.vmax
    }
}

/// Output of [`decompose`]: the block list plus the geometry needed to
/// address blocks by coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition<T> {
    pub dims: [usize; 3],
    pub block_size: usize,
    /// Number of blocks along each axis.
    pub grid: [usize; 3],
    /// Ordered by `block_id`, which is x-fastest over `grid`.
    pub blocks: Vec<BlockMeta<T>>,
}

impl<T> Decomposition<T> {
    pub fn block_id(&self, c: [usize; 3]) -> usize {
        linear_index(self.grid, c[0], c[1], c[2])
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Sample window of the box of blocks `lo..=hi`.
    pub fn span_window(&self, lo: [usize; 3], hi: [usize; 3]) -> ([usize; 3], [usize; 3]) {
        span_window(self.dims, self.block_size, lo, hi)
    }
}

pub(crate) fn span_window(
    dims: [usize; 3],
    block_size: usize,
    lo: [usize; 3],
    hi: [usize; 3],
) -> ([usize; 3], [usize; 3]) {
    let mut origin = [0; 3];
    let mut extent = [0; 3];
    for a in 0..3 {
        origin[a] = lo[a] * block_size;
        let cell_end = ((hi[a] + 1) * block_size).min(dims[a] - 1);
        extent[a] = cell_end - origin[a] + 1;
    }
    (origin, extent)
}

/// Splits the cell grid of `volume` into `block_size`³ blocks and records
/// each block's value range over its sample window.
pub fn decompose<T: Real>(volume: &Volume<T>, block_size: usize) -> Result<Decomposition<T>> {
    if block_size < 2 {
        return Err(Error::param(format!("block size must be at least 2, got {block_size}")));
    }
    let dims = volume.dims();
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::param(format!(
            "every axis needs at least 2 samples to form cells, got {dims:?}"
        )));
    }
    let grid = dims.map(|n| (n - 1).div_ceil(block_size));
    let count = grid.iter().product::<usize>();

    let blocks = (0..count)
        .into_par_iter()
        .map(|block_id| {
            let bx = block_id % grid[0];
            let by = (block_id / grid[0]) % grid[1];
            let bz = block_id / (grid[0] * grid[1]);
            let c = [bx, by, bz];
            let (sample_origin, sample_extent) = span_window(dims, block_size, c, c);
            let window = extract_window(volume.values(), dims, sample_origin, sample_extent);
            let (vmin, vmax) = value_range(&window);
            BlockMeta {
                block_id,
                block_coords: c,
                sample_origin,
                sample_extent,
                vmin,
                vmax,
            }
        })
        .collect();

    Ok(Decomposition {
        dims,
        block_size,
        grid,
        blocks,
    })
}

/// Fixed-width bit set over candidate indices.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelevanceMask {
    width: usize,
    words: Vec<u64>,
}

impl RelevanceMask {
    pub fn empty(width: usize) -> Self {
        RelevanceMask {
            width,
            words: vec![0; width.div_ceil(64)],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.width, "bit {i} out of range for width {}", self.width);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.width && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(move |&i| self.contains(i))
    }

    /// `ceil(width / 8)` bytes, bit `i` in byte `i / 8` at position `i % 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        (0..self.width.div_ceil(8))
            .map(|b| (self.words[b / 8] >> ((b % 8) * 8)) as u8)
            .collect()
    }

    pub fn from_bytes(width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width.div_ceil(8) {
            return Err(Error::Corrupt(format!(
                "relevance mask of width {width} needs {} bytes, got {}",
                width.div_ceil(8),
                bytes.len()
            )));
        }
        let mut mask = RelevanceMask::empty(width);
        for (b, &byte) in bytes.iter().enumerate() {
            mask.words[b / 8] |= (byte as u64) << ((b % 8) * 8);
        }
        if mask.iter().count() != mask.count() {
            return Err(Error::Corrupt("relevance mask has bits past its width".into()));
        }
        Ok(mask)
    }
}

impl fmt::Debug for RelevanceMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Span index: which blocks may contain the isosurface of each candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoIndex<T> {
    pub candidates: Vec<T>,
    /// `relevant[c]` lists, in ascending order, the blocks whose range spans
    /// `candidates[c]`.
    pub relevant: Vec<Vec<usize>>,
    /// Per block, the set of candidate indices it is relevant to.
    pub block_masks: Vec<RelevanceMask>,
}

impl<T> IsoIndex<T> {
    /// Blocks relevant to no candidate.
    pub fn pruned(&self) -> Vec<usize> {
        self.block_masks
            .iter()
            .enumerate()
            .filter(|(_, m)| m.is_empty())
            .map(|(b, _)| b)
            .collect()
    }
}

pub(crate) fn check_candidates<T: Real>(candidates: &[T]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::param("at least one candidate isovalue is required"));
    }
    if candidates.iter().any(|k| !k.is_finite()) {
        return Err(Error::param("candidate isovalues must be finite"));
    }
    if candidates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("candidate isovalues must be strictly increasing"));
    }
    Ok(())
}

pub fn build_index<T: Real>(blocks: &[BlockMeta<T>], candidates: &[T]) -> Result<IsoIndex<T>> {
    check_candidates(candidates)?;
    let mut relevant = vec![Vec::new(); candidates.len()];
    let mut block_masks = Vec::with_capacity(blocks.len());
    for block in blocks {
        let mut mask = RelevanceMask::empty(candidates.len());
        for (c, &k) in candidates.iter().enumerate() {
            if block.spans(k) {
                mask.set(c);
                relevant[c].push(block.block_id);
            }
        }
        block_masks.push(mask);
    }
    Ok(IsoIndex {
        candidates: candidates.to_vec(),
        relevant,
        block_masks,
    })
}

/// A box of whole blocks sharing one relevance set.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub region_id: usize,
    /// Inclusive block-coordinate bounds.
    pub block_lo: [usize; 3],
    pub block_hi: [usize; 3],
    pub sample_origin: [usize; 3],
    pub sample_extent: [usize; 3],
    pub relevance: RelevanceMask,
}

impl Region {
    pub fn block_count(&self) -> usize {
        (0..3).map(|a| self.block_hi[a] - self.block_lo[a] + 1).product()
    }

    pub fn contains_block(&self, c: [usize; 3]) -> bool {
        (0..3).all(|a| self.block_lo[a] <= c[a] && c[a] <= self.block_hi[a])
    }

    /// Block coordinates in z, y, x scan order.
    pub fn block_coords(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let (lo, hi) = (self.block_lo, self.block_hi);
        (lo[2]..=hi[2]).flat_map(move |z| {
            (lo[1]..=hi[1]).flat_map(move |y| (lo[0]..=hi[0]).map(move |x| [x, y, z]))
        })
    }
}

/// Greedy rectangular merge of blocks with identical relevance sets.
///
/// Blocks are visited in `block_id` order. An unclaimed block seeds a box
/// that grows along +x while the next block is unclaimed and has the same
/// key, then along +y while the whole next row qualifies, then along +z
/// while the whole next slab qualifies. Region ids follow seed order.
pub fn merge_regions<T>(decomp: &Decomposition<T>, index: &IsoIndex<T>) -> Vec<Region> {
    let grid = decomp.grid;
    let masks = &index.block_masks;
    let mut claimed = vec![false; decomp.blocks.len()];
    let mut regions = Vec::new();

    let free = |claimed: &[bool], c: [usize; 3], key: &RelevanceMask| {
        let id = decomp.block_id(c);
        !claimed[id] && masks[id] == *key
    };

    for seed in 0..decomp.blocks.len() {
        if claimed[seed] {
            continue;
        }
        let lo = decomp.blocks[seed].block_coords;
        let key = &masks[seed];
        let mut hi = lo;

        while hi[0] + 1 < grid[0] && free(&claimed, [hi[0] + 1, lo[1], lo[2]], key) {
            hi[0] += 1;
        }
        while hi[1] + 1 < grid[1]
            && (lo[0]..=hi[0]).all(|x| free(&claimed, [x, hi[1] + 1, lo[2]], key))
        {
            hi[1] += 1;
        }
        while hi[2] + 1 < grid[2]
            && (lo[1]..=hi[1])
                .all(|y| (lo[0]..=hi[0]).all(|x| free(&claimed, [x, y, hi[2] + 1], key)))
        {
            hi[2] += 1;
        }

        let (sample_origin, sample_extent) = decomp.span_window(lo, hi);
        let region = Region {
            region_id: regions.len(),
            block_lo: lo,
            block_hi: hi,
            sample_origin,
            sample_extent,
            relevance: key.clone(),
        };
        for c in region.block_coords() {
            claimed[decomp.block_id(c)] = true;
        }
        regions.push(region);
    }
    regions
}

/// Summary counts for reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanStats {
    pub blocks: usize,
    pub pruned_blocks: usize,
    pub regions: usize,
    /// Relevant block count per candidate.
    pub relevant_per_candidate: Vec<usize>,
    /// Region count per distinct relevance set size.
    pub regions_by_key_size: BTreeMap<usize, usize>,
}

pub fn plan_stats<T>(decomp: &Decomposition<T>, index: &IsoIndex<T>, regions: &[Region]) -> PlanStats {
    let mut regions_by_key_size = BTreeMap::new();
    for r in regions {
        *regions_by_key_size.entry(r.relevance.count()).or_insert(0) += 1;
    }
    PlanStats {
        blocks: decomp.len(),
        pruned_blocks: index.pruned().len(),
        regions: regions.len(),
        relevant_per_candidate: index.relevant.iter().map(Vec::len).collect(),
        regions_by_key_size,
    }
}
