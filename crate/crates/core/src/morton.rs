//! 3D Morton (Z-order) codes.
//!
//! Bit `k` of `x` lands at code bit `3k`, bit `k` of `y` at `3k + 1` and bit
//! `k` of `z` at `3k + 2`. With at most 21 bits per axis the code fits in 63
//! bits. Halving a coordinate is the same as shifting its code right by 3.

use thiserror::Error;

/// Largest supported bit-depth per axis.
pub const MAX_BIT_DEPTH: u32 = 21;

/// Integer voxel coordinate `(x, y, z)`.
pub type Coord = [u32; 3];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MortonError {
    #[error("bit-depth {0} outside [0, {MAX_BIT_DEPTH}]")]
    BitDepth(u32),
    #[error("coordinate {coord:?} does not fit in {bit_depth} bits")]
    CoordOutOfRange { coord: Coord, bit_depth: u32 },
    #[error("morton code {code} does not fit in {bit_depth} bits per axis")]
    CodeOutOfRange { code: u64, bit_depth: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MortonCode(pub u64);

impl MortonCode {
    pub fn value(self) -> u64 {
        self.0
    }

    /// Code of the parent voxel one level up.
    pub fn parent(self) -> MortonCode {
        MortonCode(self.0 >> 3)
    }
}

// Spread the low 21 bits of `v` so that bit k moves to bit 3k.
#[inline]
fn spread(v: u32) -> u64 {
    let mut x = (v as u64) & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

#[inline]
fn compact(v: u64) -> u32 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x as u32
}

/// Interleave without range checks. Components must be below `2^21`.
#[inline]
pub fn interleave(c: Coord) -> u64 {
    spread(c[0]) | (spread(c[1]) << 1) | (spread(c[2]) << 2)
}

/// Inverse of [`interleave`].
#[inline]
pub fn deinterleave(code: u64) -> Coord {
    [compact(code), compact(code >> 1), compact(code >> 2)]
}

pub fn morton_encode(coord: Coord, bit_depth: u32) -> Result<MortonCode, MortonError> {
    if bit_depth > MAX_BIT_DEPTH {
        return Err(MortonError::BitDepth(bit_depth));
    }
    if coord.iter().any(|&v| (v as u64) >> bit_depth != 0) {
        return Err(MortonError::CoordOutOfRange { coord, bit_depth });
    }
    Ok(MortonCode(interleave(coord)))
}

pub fn morton_decode(code: MortonCode, bit_depth: u32) -> Result<Coord, MortonError> {
    if bit_depth > MAX_BIT_DEPTH {
        return Err(MortonError::BitDepth(bit_depth));
    }
    if code.0 >> (3 * bit_depth) != 0 {
        return Err(MortonError::CodeOutOfRange {
            code: code.0,
            bit_depth,
        });
    }
    Ok(deinterleave(code.0))
}

/// Position of a voxel inside its parent's 2x2x2 block: `x&1 + 2(y&1) + 4(z&1)`.
#[inline]
pub fn octant_index(c: Coord) -> u8 {
    ((c[0] & 1) | ((c[1] & 1) << 1) | ((c[2] & 1) << 2)) as u8
}
