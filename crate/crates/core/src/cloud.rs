//! Raw and voxelized point clouds.

use thiserror::Error;

use crate::hierarchy::{initial_sort, HierarchyError, BASE_LEVEL};
use crate::morton::{Coord, MAX_BIT_DEPTH};

// Quantized positions within this many voxels of a grid line snap to it, so
// clouds written by `write_ply` re-quantize to the same voxels.
const SNAP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CloudError {
    #[error("bit-depth {0} outside [{BASE_LEVEL}, {MAX_BIT_DEPTH}]")]
    BitDepth(u32),
    #[error("quantization step must be positive and finite, got {0}")]
    Step(f64),
    #[error("point {index} is not finite")]
    NonFinite { index: usize },
    #[error("point {index} maps to voxel {voxel:?}, outside [0, 2^{bit_depth})")]
    OutOfRange {
        index: usize,
        voxel: [i64; 3],
        bit_depth: u32,
    },
    #[error("cloud is empty")]
    Empty,
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawCloud {
    pub points: Vec<[f64; 3]>,
}

impl RawCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        RawCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Per-axis minimum and maximum, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.points.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some((lo, hi))
    }
}

/// Voxel grid placement: voxel `c` covers `origin + step * [c, c + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridParams {
    pub origin: [f64; 3],
    pub step: f64,
}

impl GridParams {
    /// Origin at the floor of the cloud's minimum; step just large enough for
    /// the bounding box to fit in `2^bit_depth` voxels per axis.
    pub fn fit(cloud: &RawCloud, bit_depth: u32) -> GridParams {
        let Some((lo, hi)) = cloud.bounds() else {
            return GridParams {
                origin: [0.0; 3],
                step: 1.0,
            };
        };
        let origin = lo.map(f64::floor);
        let extent = (0..3).map(|a| hi[a] - origin[a]).fold(0.0, f64::max);
        let cells = (1u64 << bit_depth) as f64;
        let step = if extent > 0.0 {
            extent / (cells - 1.0)
        } else {
            1.0
        };
        GridParams { origin, step }
    }
}

/// Deduplicated, Morton-sorted voxel coordinates at a fixed bit-depth.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCloud {
    coords: Vec<Coord>,
    bit_depth: u32,
    grid: GridParams,
    merged: usize,
}

impl QuantizedCloud {
    /// Sorts and deduplicates arbitrary in-range voxel coordinates.
    pub fn from_coords(
        coords: &[Coord],
        bit_depth: u32,
        grid: GridParams,
    ) -> Result<Self, CloudError> {
        check_bit_depth(bit_depth)?;
        let level = initial_sort(coords, bit_depth).map_err(|e| match e {
            HierarchyError::Empty => CloudError::Empty,
            other => CloudError::Hierarchy(other),
        })?;
        let merged = coords.len() - level.len();
        Ok(QuantizedCloud {
            coords: level.into_coords(),
            bit_depth,
            grid,
            merged,
        })
    }

    /// Wraps coordinates already known to satisfy every invariant.
    pub(crate) fn from_sorted_unchecked(coords: Vec<Coord>, bit_depth: u32, grid: GridParams) -> Self {
        QuantizedCloud {
            coords,
            bit_depth,
            grid,
            merged: 0,
        }
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn bit_depth(&self) -> u32 {
        self.bit_depth
    }

    pub fn grid(&self) -> GridParams {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Input points merged into an already occupied voxel.
    pub fn merged_duplicates(&self) -> usize {
        self.merged
    }

    /// Voxel corners in source units.
    pub fn dequantize(&self) -> RawCloud {
        let GridParams { origin, step } = self.grid;
        RawCloud::new(
            self.coords
                .iter()
                .map(|c| {
                    [
                        origin[0] + c[0] as f64 * step,
                        origin[1] + c[1] as f64 * step,
                        origin[2] + c[2] as f64 * step,
                    ]
                })
                .collect(),
        )
    }
}

fn check_bit_depth(bit_depth: u32) -> Result<(), CloudError> {
    if !(BASE_LEVEL..=MAX_BIT_DEPTH).contains(&bit_depth) {
        return Err(CloudError::BitDepth(bit_depth));
    }
    Ok(())
}

fn to_voxel(p: f64, origin: f64, step: f64) -> i64 {
    let t = (p - origin) / step;
    let nearest = t.round();
    if (t - nearest).abs() <= SNAP_TOLERANCE {
        nearest as i64
    } else {
        t.floor() as i64
    }
}

/// Maps every point to `floor((p - origin) / step)`, rejects points outside
/// the grid, merges duplicates and Morton-sorts the result.
pub fn quantize(
    cloud: &RawCloud,
    bit_depth: u32,
    origin: [f64; 3],
    step: f64,
) -> Result<QuantizedCloud, CloudError> {
    check_bit_depth(bit_depth)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(CloudError::Step(step));
    }
    if cloud.is_empty() {
        return Err(CloudError::Empty);
    }
    let limit = 1i64 << bit_depth;
    let mut coords = Vec::with_capacity(cloud.len());
    for (index, p) in cloud.points.iter().enumerate() {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(CloudError::NonFinite { index });
        }
        let voxel = [
            to_voxel(p[0], origin[0], step),
            to_voxel(p[1], origin[1], step),
            to_voxel(p[2], origin[2], step),
        ];
        if voxel.iter().any(|&v| v < 0 || v >= limit) {
            return Err(CloudError::OutOfRange {
                index,
                voxel,
                bit_depth,
            });
        }
        coords.push([voxel[0] as u32, voxel[1] as u32, voxel[2] as u32]);
    }
    QuantizedCloud::from_coords(&coords, bit_depth, GridParams { origin, step })
}

/// [`quantize`] with [`GridParams::fit`] defaults.
pub fn quantize_fit(cloud: &RawCloud, bit_depth: u32) -> Result<QuantizedCloud, CloudError> {
    check_bit_depth(bit_depth)?;
    let grid = GridParams::fit(cloud, bit_depth);
    quantize(cloud, bit_depth, grid.origin, grid.step)
}
