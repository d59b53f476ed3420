//! Brute-force oracles and random inputs shared by the integration tests.
#![allow(dead_code)]

pub mod grad;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pcc_core::hierarchy::BASE_LEVEL;
use pcc_core::{Coord, Hierarchy, Stage};

/// Bit-by-bit interleave: bit k of x, y, z lands at 3k, 3k+1, 3k+2.
pub fn morton_naive(c: Coord) -> u64 {
    let mut code = 0u64;
    for k in 0..21 {
        for (axis, &v) in c.iter().enumerate() {
            code |= (((v >> k) & 1) as u64) << (3 * k + axis as u32);
        }
    }
    code
}

pub fn sort_naive(coords: &[Coord]) -> Vec<Coord> {
    let set: BTreeMap<u64, Coord> = coords.iter().map(|&c| (morton_naive(c), c)).collect();
    set.into_values().collect()
}

/// Parents and occupancy bytes by grouping halved coordinates in a map.
pub fn coarsen_naive(coords: &[Coord]) -> (Vec<Coord>, Vec<u8>) {
    let mut groups: BTreeMap<u64, (Coord, u8)> = BTreeMap::new();
    for &c in coords {
        let p = [c[0] / 2, c[1] / 2, c[2] / 2];
        let u = (c[0] % 2) + 2 * (c[1] % 2) + 4 * (c[2] % 2);
        groups.entry(morton_naive(p)).or_insert((p, 0)).1 |= 1 << u;
    }
    groups.into_values().unzip()
}

/// Children of every parent, from the bit-shift definition of the mask.
pub fn expand_naive(parents: &[Coord], octants: &[u8]) -> Vec<Coord> {
    let mut out = Vec::new();
    for (p, &o) in parents.iter().zip(octants) {
        for u in 0..8u32 {
            if (o >> u) & 1 == 1 {
                out.push([2 * p[0] + (u & 1), 2 * p[1] + ((u >> 1) & 1), 2 * p[2] + ((u >> 2) & 1)]);
            }
        }
    }
    sort_naive(&out)
}

pub fn mask_naive(o: u8) -> [u8; 8] {
    std::array::from_fn(|u| (o >> u) & 1)
}

/// Mean count of other voxels within the window, by scanning all pairs.
pub fn neighbors_naive(coords: &[Coord], window: u32) -> f64 {
    if coords.is_empty() {
        return 0.0;
    }
    let mut total = 0usize;
    for (i, a) in coords.iter().enumerate() {
        for (j, b) in coords.iter().enumerate() {
            if i == j {
                continue;
            }
            let hit = match window {
                2 => (0..3).all(|k| a[k] / 2 == b[k] / 2),
                _ => (0..3).all(|k| (a[k] as i64 - b[k] as i64).abs() <= 1),
            };
            total += hit as usize;
        }
    }
    total as f64 / coords.len() as f64
}

/// Random voxel set at `bit_depth`: a mix of uniform points and small
/// clusters, so both sparse and dense octants occur.
pub fn random_coords(rng: &mut ChaCha8Rng, n: usize, bit_depth: u32) -> Vec<Coord> {
    let side = 1u32 << bit_depth;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if rng.random_bool(0.3) {
            out.push([rng.random_range(0..side), rng.random_range(0..side), rng.random_range(0..side)]);
        } else {
            let c: Coord = [rng.random_range(0..side), rng.random_range(0..side), rng.random_range(0..side)];
            let r = rng.random_range(1..4u32);
            for _ in 0..rng.random_range(1..16) {
                let j: Coord = std::array::from_fn(|k| {
                    (c[k] as i64 + rng.random_range(-(r as i64)..=r as i64)).clamp(0, side as i64 - 1) as u32
                });
                out.push(j);
            }
        }
    }
    out.truncate(n);
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Checks every level of `h` against the oracles and the structural
/// identities. Returns a description of the first failure.
pub fn check_hierarchy(h: &Hierarchy, input: &[Coord]) -> Result<(), String> {
    let depth = h.bit_depth();
    let top: BTreeSet<Coord> = input.iter().copied().collect();
    let finest: BTreeSet<Coord> = h.level(depth).coords().iter().copied().collect();
    if finest != top {
        return Err("finest level is not the input set".into());
    }
    if h.level(depth).coords() != sort_naive(input).as_slice() {
        return Err("finest level not in Morton order".into());
    }
    for b in BASE_LEVEL..depth {
        let child = h.level(b + 1).coords();
        let (parents, octants) = coarsen_naive(child);
        if h.level(b).coords() != parents.as_slice() {
            return Err(format!("level {b}: parents differ from oracle"));
        }
        let labels = h.labels(b);
        if labels.octants() != octants.as_slice() {
            return Err(format!("level {b}: octants differ from oracle"));
        }
        for ((&o, &q1), &q2) in labels
            .octants()
            .iter()
            .zip(labels.stage(Stage::First))
            .zip(labels.stage(Stage::Second))
        {
            if 16 * q2 as u32 + q1 as u32 != o as u32 || q1 > 15 || q2 > 15 {
                return Err(format!("level {b}: 16*q2+q1 != O for O={o}"));
            }
        }
        let pop: usize = labels.octants().iter().map(|o| o.count_ones() as usize).sum();
        if pop != child.len() {
            return Err(format!("level {b}: popcount sum {pop} vs {} children", child.len()));
        }
        if expand_naive(&parents, &octants) != child {
            return Err(format!("level {b}: expansion oracle mismatch"));
        }
    }
    for l in h.levels() {
        if !l.is_morton_ascending() {
            return Err(format!("level {} not strictly ascending", l.level()));
        }
    }
    Ok(())
}

/// Untrained network pool with `k` random BoE centers.
pub fn tiny_neural(dim: usize, k: usize, seed: u64) -> pcc_core::CodecModel {
    use pcc_core::boe::{BoECenters, DESCRIPTOR_LEN};
    let mut r = rng(seed ^ 0xc0ffee);
    let centers = (0..k)
        .map(|_| {
            let mut c: [f64; DESCRIPTOR_LEN] = std::array::from_fn(|_| r.random_range(0.0..1.0));
            let s: f64 = c.iter().sum();
            c.iter_mut().for_each(|v| *v /= s);
            c
        })
        .collect();
    let m = pcc_core::model::NeuralModel::init(dim, BoECenters::new(centers), seed);
    pcc_core::CodecModel::Neural(std::sync::Arc::new(m))
}

pub fn quantized(coords: &[Coord], bit_depth: u32) -> pcc_core::QuantizedCloud {
    let grid = pcc_core::GridParams {
        origin: [0.0; 3],
        step: 1.0,
    };
    pcc_core::QuantizedCloud::from_coords(coords, bit_depth, grid).unwrap()
}
