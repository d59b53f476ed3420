//! Morton-order-preserving octree hierarchy.
//!
//! A single sort of the finest level fixes a global Z-order. Coarsening halves
//! coordinates (a 3-bit shift of the Morton code), so equal parents are always
//! adjacent and a run-length scan replaces any re-sort. Expansion enumerates
//! children in octant order `u = dx + 2dy + 4dz`, which is again Morton order.

use rustc_hash::FxHashSet;
use thiserror::Error;

use crate::morton::{interleave, octant_index, Coord, MAX_BIT_DEPTH};
use crate::tensor::Matrix;

/// Coarsest coded level; its coordinates are stored raw in the bitstream.
pub const BASE_LEVEL: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HierarchyError {
    #[error("empty coordinate set")]
    Empty,
    #[error("bit-depth {0} outside [{BASE_LEVEL}, {MAX_BIT_DEPTH}]")]
    BitDepth(u32),
    #[error("coordinate {coord:?} at index {index} does not fit in {bit_depth} bits")]
    OutOfRange {
        index: usize,
        coord: Coord,
        bit_depth: u32,
    },
    #[error("octant label at index {0} is zero")]
    ZeroOctant(usize),
    #[error("{labels} labels for {parents} parents")]
    LabelCount { labels: usize, parents: usize },
    #[error("feature matrix has {rows} rows, mask has {parents}")]
    ShapeMismatch { rows: usize, parents: usize },
    #[error("coordinates not strictly Morton-ascending at index {0}")]
    NotSorted(usize),
    #[error("cannot coarsen level {0}")]
    TooShallow(u32),
    #[error("neighbor window must be 2 or 3, got {0}")]
    Window(u32),
}

/// Coding stage of the two-stage factorization of an octant byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    /// Low nibble: octants 0..4 (lower half along z).
    First,
    /// High nibble: octants 4..8.
    Second,
}

impl Stage {
    pub const BOTH: [Stage; 2] = [Stage::First, Stage::Second];

    pub fn index(self) -> usize {
        match self {
            Stage::First => 0,
            Stage::Second => 1,
        }
    }
}

/// Voxel coordinates of one level, strictly ascending in Morton order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelState {
    level: u32,
    coords: Vec<Coord>,
}

impl LevelState {
    /// Wraps coordinates that the caller guarantees are unique, in range and
    /// Morton-ascending.
    pub(crate) fn from_sorted(level: u32, coords: Vec<Coord>) -> Self {
        LevelState { level, coords }
    }

    /// Validating constructor; rejects unsorted, duplicate or out-of-range input.
    pub fn from_morton_sorted(level: u32, coords: Vec<Coord>) -> Result<Self, HierarchyError> {
        if level > MAX_BIT_DEPTH {
            return Err(HierarchyError::BitDepth(level));
        }
        check_range(&coords, level)?;
        let state = LevelState { level, coords };
        if !state.is_morton_ascending() {
            return Err(HierarchyError::NotSorted(first_unsorted(&state.coords)));
        }
        Ok(state)
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<Coord> {
        self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn is_morton_ascending(&self) -> bool {
        self.coords
            .windows(2)
            .all(|w| interleave(w[0]) < interleave(w[1]))
    }

    /// Octant parity index of every voxel, in order.
    pub fn parities(&self) -> Vec<u8> {
        self.coords.iter().map(|&c| octant_index(c)).collect()
    }
}

fn first_unsorted(coords: &[Coord]) -> usize {
    coords
        .windows(2)
        .position(|w| interleave(w[0]) >= interleave(w[1]))
        .map_or(0, |i| i + 1)
}

fn check_range(coords: &[Coord], bit_depth: u32) -> Result<(), HierarchyError> {
    for (index, &coord) in coords.iter().enumerate() {
        if coord.iter().any(|&v| (v as u64) >> bit_depth != 0) {
            return Err(HierarchyError::OutOfRange {
                index,
                coord,
                bit_depth,
            });
        }
    }
    Ok(())
}

/// Per-parent child occupancy bytes and their two 4-bit stage symbols.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OccupancySymbols {
    octant: Vec<u8>,
    stage1: Vec<u8>,
    stage2: Vec<u8>,
}

impl OccupancySymbols {
    pub fn from_octants(octant: Vec<u8>) -> Self {
        let stage1 = octant.iter().map(|&o| o & 0x0f).collect();
        let stage2 = octant.iter().map(|&o| o >> 4).collect();
        OccupancySymbols {
            octant,
            stage1,
            stage2,
        }
    }

    /// Rebuilds octant bytes as `16 * q2 + q1`. Panics on length mismatch.
    pub fn from_stages(stage1: Vec<u8>, stage2: Vec<u8>) -> Self {
        assert_eq!(stage1.len(), stage2.len());
        let octant = stage1
            .iter()
            .zip(&stage2)
            .map(|(&q1, &q2)| (q2 << 4) | (q1 & 0x0f))
            .collect();
        OccupancySymbols {
            octant,
            stage1,
            stage2,
        }
    }

    pub fn octants(&self) -> &[u8] {
        &self.octant
    }

    pub fn stage(&self, stage: Stage) -> &[u8] {
        match stage {
            Stage::First => &self.stage1,
            Stage::Second => &self.stage2,
        }
    }

    pub fn len(&self) -> usize {
        self.octant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.octant.is_empty()
    }

    /// Total number of children described by these labels.
    pub fn child_count(&self) -> usize {
        self.octant.iter().map(|o| o.count_ones() as usize).sum()
    }
}

const fn build_mask_table() -> [[u8; 8]; 256] {
    let mut table = [[0u8; 8]; 256];
    let mut byte = 0;
    while byte < 256 {
        let mut u = 0;
        while u < 8 {
            table[byte][u] = ((byte >> u) & 1) as u8;
            u += 1;
        }
        byte += 1;
    }
    table
}

/// Occupancy byte to its 8-entry 0/1 row.
pub static MASK_TABLE: [[u8; 8]; 256] = build_mask_table();

/// Octant offsets `delta_u` in Morton octant order.
pub const OCTANT_OFFSETS: [Coord; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Per-parent, per-octant occupancy mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OctantMask {
    rows: Vec<[u8; 8]>,
}

impl OctantMask {
    pub fn rows(&self) -> &[[u8; 8]] {
        &self.rows
    }

    pub fn parents(&self) -> usize {
        self.rows.len()
    }

    pub fn set_bits(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&b| b as usize).sum::<usize>())
            .sum()
    }
}

pub fn occupancy_mask(labels: &[u8]) -> Result<OctantMask, HierarchyError> {
    let mut rows = Vec::with_capacity(labels.len());
    for (i, &o) in labels.iter().enumerate() {
        if o == 0 {
            return Err(HierarchyError::ZeroOctant(i));
        }
        rows.push(MASK_TABLE[o as usize]);
    }
    Ok(OctantMask { rows })
}

/// Deduplicates and Morton-sorts the finest-level coordinates. This is the
/// only sort the codec performs in Morton mode.
pub fn initial_sort(coords: &[Coord], bit_depth: u32) -> Result<LevelState, HierarchyError> {
    if bit_depth > MAX_BIT_DEPTH {
        return Err(HierarchyError::BitDepth(bit_depth));
    }
    if coords.is_empty() {
        return Err(HierarchyError::Empty);
    }
    check_range(coords, bit_depth)?;
    let mut codes: Vec<u64> = coords.iter().map(|&c| interleave(c)).collect();
    codes.sort_unstable();
    codes.dedup();
    let coords = codes.into_iter().map(crate::morton::deinterleave).collect();
    Ok(LevelState::from_sorted(bit_depth, coords))
}

/// Halves every coordinate and merges runs of equal parents, producing the
/// parent level and each parent's child occupancy byte.
pub fn coarsen(level: &LevelState) -> Result<(LevelState, OccupancySymbols), HierarchyError> {
    if level.level < BASE_LEVEL + 1 {
        return Err(HierarchyError::TooShallow(level.level));
    }
    let mut parents: Vec<Coord> = Vec::with_capacity(level.len() / 2 + 1);
    let mut octants: Vec<u8> = Vec::with_capacity(level.len() / 2 + 1);
    for &c in &level.coords {
        let p = [c[0] >> 1, c[1] >> 1, c[2] >> 1];
        let bit = 1u8 << octant_index(c);
        match parents.last() {
            Some(&last) if last == p => *octants.last_mut().unwrap() |= bit,
            _ => {
                parents.push(p);
                octants.push(bit);
            }
        }
    }
    Ok((
        LevelState::from_sorted(level.level - 1, parents),
        OccupancySymbols::from_octants(octants),
    ))
}

/// Regenerates the child level from parents and their occupancy bytes.
pub fn expand_children(
    parent: &LevelState,
    labels: &OccupancySymbols,
) -> Result<LevelState, HierarchyError> {
    expand_from_octants(parent, labels.octants())
}

pub(crate) fn expand_from_octants(
    parent: &LevelState,
    octants: &[u8],
) -> Result<LevelState, HierarchyError> {
    if octants.len() != parent.len() {
        return Err(HierarchyError::LabelCount {
            labels: octants.len(),
            parents: parent.len(),
        });
    }
    let total: usize = octants.iter().map(|o| o.count_ones() as usize).sum();
    let mut children = Vec::with_capacity(total);
    for (i, (&c, &o)) in parent.coords.iter().zip(octants).enumerate() {
        if o == 0 {
            return Err(HierarchyError::ZeroOctant(i));
        }
        let row = &MASK_TABLE[o as usize];
        let base = [c[0] << 1, c[1] << 1, c[2] << 1];
        for (u, d) in OCTANT_OFFSETS.iter().enumerate() {
            if row[u] != 0 {
                children.push([base[0] + d[0], base[1] + d[1], base[2] + d[2]]);
            }
        }
    }
    Ok(LevelState::from_sorted(parent.level + 1, children))
}

/// Copies each parent row to every occupied child, in child order.
pub fn replicate_features<T: Copy>(
    features: &Matrix<T>,
    mask: &OctantMask,
) -> Result<Matrix<T>, HierarchyError> {
    if features.rows() != mask.parents() {
        return Err(HierarchyError::ShapeMismatch {
            rows: features.rows(),
            parents: mask.parents(),
        });
    }
    let cols = features.cols();
    let mut data = Vec::with_capacity(mask.set_bits() * cols);
    let mut rows = 0;
    for (n, row) in mask.rows.iter().enumerate() {
        let src = features.row(n);
        for &bit in row {
            if bit != 0 {
                data.extend_from_slice(src);
                rows += 1;
            }
        }
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

/// Index of the parent of every child, in child order.
pub fn parent_index(octants: &[u8]) -> Vec<u32> {
    let mut out = Vec::with_capacity(octants.len() * 2);
    for (n, &o) in octants.iter().enumerate() {
        for _ in 0..o.count_ones() {
            out.push(n as u32);
        }
    }
    out
}

/// Mean number of other occupied voxels around each voxel.
///
/// Window 2 counts the voxel's own 2x2x2 sibling block, window 3 the 3x3x3
/// cube centered on it.
pub fn neighbor_stats(level: &LevelState, window: u32) -> Result<f64, HierarchyError> {
    if level.is_empty() {
        return Ok(0.0);
    }
    let total: u64 = match window {
        2 => {
            // siblings are contiguous in Morton order
            let mut total = 0u64;
            let mut start = 0;
            let coords = &level.coords;
            while start < coords.len() {
                let p = parent_of(coords[start]);
                let mut end = start + 1;
                while end < coords.len() && parent_of(coords[end]) == p {
                    end += 1;
                }
                let run = (end - start) as u64;
                total += run * (run - 1);
                start = end;
            }
            total
        }
        3 => {
            let set: FxHashSet<u64> = level.coords.iter().map(|&c| interleave(c)).collect();
            let limit = 1i64 << level.level;
            let mut total = 0u64;
            for &c in &level.coords {
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if dx == 0 && dy == 0 && dz == 0 {
                                continue;
                            }
                            let n = [c[0] as i64 + dx, c[1] as i64 + dy, c[2] as i64 + dz];
                            if n.iter().any(|&v| v < 0 || v >= limit) {
                                continue;
                            }
                            let code = interleave([n[0] as u32, n[1] as u32, n[2] as u32]);
                            if set.contains(&code) {
                                total += 1;
                            }
                        }
                    }
                }
            }
            total
        }
        w => return Err(HierarchyError::Window(w)),
    };
    Ok(total as f64 / level.len() as f64)
}

#[inline]
fn parent_of(c: Coord) -> Coord {
    [c[0] >> 1, c[1] >> 1, c[2] >> 1]
}

/// How the hierarchy keeps encoder and decoder orders aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrderingMode {
    /// One initial sort; every later level inherits the order.
    #[default]
    Morton,
    /// Re-sorts every level on the way down and again on the way up, the way
    /// level-independent pipelines keep their voxel orders in sync. Produces
    /// identical bitstreams; exists for benchmarking.
    ExplicitSort,
}

/// Explicit re-sort by Morton code. Keyed stable sort plus a gather, mirroring
/// what a pipeline without an order-preserving hierarchy pays per level.
pub fn explicit_sort(level: &mut LevelState) {
    let mut keyed: Vec<(u64, u32)> = level
        .coords
        .iter()
        .enumerate()
        .map(|(i, &c)| (interleave(c), i as u32))
        .collect();
    keyed.sort_by_key(|&(k, _)| k);
    let sorted = keyed.iter().map(|&(_, i)| level.coords[i as usize]).collect();
    level.coords = sorted;
}

/// Every level from the base up to the input bit-depth, with the occupancy
/// bytes that link each level to the next.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    /// `levels[i]` is level `BASE_LEVEL + i`.
    levels: Vec<LevelState>,
    /// `labels[i]` describes the children of `levels[i]`.
    labels: Vec<OccupancySymbols>,
    sorts: usize,
}

impl Hierarchy {
    pub fn build(
        coords: &[Coord],
        bit_depth: u32,
        mode: OrderingMode,
    ) -> Result<Self, HierarchyError> {
        if !(BASE_LEVEL..=MAX_BIT_DEPTH).contains(&bit_depth) {
            return Err(HierarchyError::BitDepth(bit_depth));
        }
        let mut sorts = 0;
        let mut top = match mode {
            OrderingMode::Morton => {
                sorts += 1;
                initial_sort(coords, bit_depth)?
            }
            OrderingMode::ExplicitSort => {
                if coords.is_empty() {
                    return Err(HierarchyError::Empty);
                }
                check_range(coords, bit_depth)?;
                let mut top = LevelState::from_sorted(bit_depth, coords.to_vec());
                if bit_depth == BASE_LEVEL {
                    explicit_sort(&mut top);
                    top.coords.dedup();
                    sorts += 1;
                }
                top
            }
        };
        let mut levels = Vec::with_capacity(bit_depth as usize);
        let mut labels = Vec::with_capacity(bit_depth as usize);
        while top.level > BASE_LEVEL {
            if mode == OrderingMode::ExplicitSort {
                explicit_sort(&mut top);
                top.coords.dedup();
                sorts += 1;
            }
            let (parent, symbols) = coarsen(&top)?;
            levels.push(top);
            labels.push(symbols);
            top = parent;
        }
        levels.push(top);
        levels.reverse();
        labels.reverse();
        Ok(Hierarchy {
            levels,
            labels,
            sorts,
        })
    }

    pub fn bit_depth(&self) -> u32 {
        BASE_LEVEL + self.levels.len() as u32 - 1
    }

    pub fn level(&self, b: u32) -> &LevelState {
        &self.levels[(b - BASE_LEVEL) as usize]
    }

    pub(crate) fn level_mut(&mut self, b: u32) -> &mut LevelState {
        &mut self.levels[(b - BASE_LEVEL) as usize]
    }

    /// Occupancy bytes of the parents at level `b` (`b < bit_depth`).
    pub fn labels(&self, b: u32) -> &OccupancySymbols {
        &self.labels[(b - BASE_LEVEL) as usize]
    }

    pub fn levels(&self) -> &[LevelState] {
        &self.levels
    }

    /// Sorts performed while building.
    pub fn sort_count(&self) -> usize {
        self.sorts
    }

    /// Number of coded levels, `bit_depth - BASE_LEVEL`.
    pub fn coded_levels(&self) -> usize {
        self.labels.len()
    }

    /// `sum_b N_b` over the coded levels.
    pub fn coded_parents(&self) -> usize {
        self.labels.iter().map(|l| l.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level(b: u32, coords: &[Coord]) -> LevelState {
        initial_sort(coords, b).unwrap()
    }

    #[test]
    fn initial_sort_dedups_and_orders() {
        let l = level(4, &[[1, 0, 0], [0, 0, 0], [1, 0, 0]]);
        assert_eq!(l.coords(), &[[0, 0, 0], [1, 0, 0]]);
        let again = initial_sort(l.coords(), 4).unwrap();
        assert_eq!(again, l);
        assert_eq!(initial_sort(&[], 4), Err(HierarchyError::Empty));
    }

    #[test]
    fn coarsen_examples() {
        let (p, labels) = coarsen(&level(3, &[[0, 0, 0], [1, 1, 1]])).unwrap();
        assert_eq!(p.coords(), &[[0, 0, 0]]);
        assert_eq!(labels.octants(), &[129]);
        assert_eq!(labels.stage(Stage::First), &[1]);
        assert_eq!(labels.stage(Stage::Second), &[8]);

        let (p, labels) = coarsen(&level(3, &[[2, 0, 0]])).unwrap();
        assert_eq!(p.coords(), &[[1, 0, 0]]);
        assert_eq!(labels.octants(), &[1]);
        assert_eq!(coarsen(&level(2, &[[0, 0, 0]])).unwrap_err(), HierarchyError::TooShallow(2));
    }

    #[test]
    fn expand_examples() {
        let p = LevelState::from_sorted(2, vec![[0, 0, 0]]);
        let c = expand_children(&p, &OccupancySymbols::from_octants(vec![129])).unwrap();
        assert_eq!(c.coords(), &[[0, 0, 0], [1, 1, 1]]);
        let p = LevelState::from_sorted(2, vec![[1, 0, 0]]);
        let c = expand_children(&p, &OccupancySymbols::from_octants(vec![1])).unwrap();
        assert_eq!(c.coords(), &[[2, 0, 0]]);
        assert_eq!(c.level(), 3);
    }

    #[test]
    fn mask_examples() {
        let m = occupancy_mask(&[5, 255]).unwrap();
        assert_eq!(m.rows()[0], [1, 0, 1, 0, 0, 0, 0, 0]);
        assert_eq!(m.rows()[1], [1; 8]);
        assert_eq!(occupancy_mask(&[3, 0]), Err(HierarchyError::ZeroOctant(1)));
        for byte in 0..256usize {
            for u in 0..8 {
                assert_eq!(MASK_TABLE[byte][u], ((byte >> u) & 1) as u8);
            }
        }
    }

    #[test]
    fn replicate_examples() {
        let f = Matrix::from_vec(1, 2, vec![1.0f32, 2.0]);
        let r = replicate_features(&f, &occupancy_mask(&[129]).unwrap()).unwrap();
        assert_eq!(r.as_slice(), &[1.0, 2.0, 1.0, 2.0]);
        let r = replicate_features(&f, &occupancy_mask(&[1]).unwrap()).unwrap();
        assert_eq!(r.as_slice(), &[1.0, 2.0]);
        let bad = replicate_features(&f, &occupancy_mask(&[1, 1]).unwrap());
        assert!(matches!(bad, Err(HierarchyError::ShapeMismatch { .. })));
    }

    #[test]
    fn neighbor_examples() {
        let one = level(5, &[[3, 3, 3]]);
        assert_eq!(neighbor_stats(&one, 2).unwrap(), 0.0);
        assert_eq!(neighbor_stats(&one, 3).unwrap(), 0.0);
        let block: Vec<Coord> = OCTANT_OFFSETS.iter().map(|d| [d[0] + 2, d[1] + 2, d[2] + 2]).collect();
        let full = level(5, &block);
        assert_eq!(neighbor_stats(&full, 3).unwrap(), 7.0);
        assert_eq!(neighbor_stats(&full, 2).unwrap(), 7.0);
        assert!(neighbor_stats(&full, 4).is_err());
    }

    #[test]
    fn explicit_mode_counts_and_matches() {
        let coords: Vec<Coord> = (0..200u32).map(|i| [i * 7 % 64, i * 13 % 64, i * 29 % 64]).collect();
        let m = Hierarchy::build(&coords, 6, OrderingMode::Morton).unwrap();
        let e = Hierarchy::build(&coords, 6, OrderingMode::ExplicitSort).unwrap();
        assert_eq!(m.sort_count(), 1);
        assert_eq!(e.sort_count(), 4);
        assert_eq!(m.levels(), e.levels());
        for b in 2..6 {
            assert_eq!(m.labels(b), e.labels(b));
        }
    }

    #[test]
    fn from_morton_sorted_validates() {
        assert!(LevelState::from_morton_sorted(3, vec![[0, 0, 0], [1, 0, 0]]).is_ok());
        assert!(LevelState::from_morton_sorted(3, vec![[1, 0, 0], [0, 0, 0]]).is_err());
        assert!(LevelState::from_morton_sorted(3, vec![[8, 0, 0]]).is_err());
    }
}
