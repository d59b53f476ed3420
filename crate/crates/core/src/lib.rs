//! Progressive octree geometry codec for voxelized LiDAR point clouds.
//!
//! The codec walks the octree from bit-depth 2 up to the input bit-depth. At
//! each level every occupied voxel's 8-bit child occupancy is split into two
//! 4-bit symbols which are range-coded under per-point distributions from a
//! context model. Levels stay in one global Morton order, so the input is
//! sorted exactly once.

pub mod boe;
pub mod cloud;
pub mod codec;
pub mod entropy;
pub mod hierarchy;
pub mod model;
pub mod morton;
pub mod ply;
pub mod synth;
pub mod tensor;

pub use cloud::{quantize, quantize_fit, CloudError, GridParams, QuantizedCloud, RawCloud};
pub use codec::{decode, encode, CodecError, CodecModel, EncodeMode, EncodeOptions, EncodeReport};
pub use hierarchy::{Hierarchy, LevelState, OccupancySymbols, OrderingMode, Stage};
pub use morton::{Coord, MortonCode};
