//! Progressive encoder and decoder.
//!
//! The encoder builds the whole hierarchy first, then walks it from the base
//! level up. For every level it asks the context model for stage tables and
//! range-codes the stage symbols. In pipelined mode the model runs on the
//! calling thread and hands finished tables over a bounded queue to a coder
//! thread, so inference for the next stage overlaps coding of the previous
//! one. Both modes write the same bytes.

pub mod container;

use std::sync::mpsc::sync_channel;
use std::thread;

use thiserror::Error;

use crate::cloud::{CloudError, QuantizedCloud};
use crate::entropy::{self, quantize_row, symbol_bits, EntropyError, ProbabilityTable, RangeDecoder};
use crate::hierarchy::{
    expand_from_octants, explicit_sort, Hierarchy, HierarchyError, LevelState, OrderingMode, Stage,
    BASE_LEVEL,
};
use crate::model::{materialize, ContextModel, ModelError};

pub use crate::model::CodecModel;
pub use container::{read_header, Header, MAGIC, VERSION};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("not a coded point cloud (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u8),
    #[error("container ends early: needed {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} unexpected bytes after the checksum")]
    Trailing(usize),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("bad header: {0}")]
    Header(String),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("level {level} selects network {index}, model has {available}")]
    BadIndex { level: u32, index: u8, available: usize },
    #[error("level {level} stage {stage}")]
    Chunk {
        level: u32,
        stage: usize,
        source: EntropyError,
    },
    #[error("level {0} decodes to an empty octant")]
    EmptyOctant(u32),
    #[error("coder thread failed: {0}")]
    Pipeline(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EncodeMode {
    #[default]
    Sync,
    Pipelined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeOptions {
    pub mode: EncodeMode,
    pub ordering: OrderingMode,
    /// Work items the queue holds before the producer blocks.
    pub queue_depth: usize,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            mode: EncodeMode::Sync,
            ordering: OrderingMode::Morton,
            queue_depth: 4,
        }
    }
}

impl EncodeOptions {
    pub fn pipelined() -> Self {
        EncodeOptions {
            mode: EncodeMode::Pipelined,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelReport {
    pub level: u32,
    /// Voxels at this level, i.e. symbols per stage.
    pub parents: usize,
    pub network: u8,
    pub stage_bytes: [usize; 2],
}

impl LevelReport {
    pub fn payload_bits(&self) -> u64 {
        8 * (self.stage_bytes[0] + self.stage_bytes[1]) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeReport {
    pub bit_depth: u32,
    pub points: usize,
    pub container_bytes: usize,
    pub header_bytes: usize,
    pub index_bytes: usize,
    /// Length prefixes of the stage chunks.
    pub framing_bytes: usize,
    pub crc_bytes: usize,
    pub levels: Vec<LevelReport>,
    /// Sorts performed, including the initial one.
    pub sort_count: usize,
}

impl EncodeReport {
    /// Container bits per input voxel.
    pub fn bpp(&self) -> f64 {
        8.0 * self.container_bytes as f64 / self.points as f64
    }

    pub fn payload_bits(&self) -> u64 {
        self.levels.iter().map(LevelReport::payload_bits).sum()
    }

    pub fn coded_parents(&self) -> usize {
        self.levels.iter().map(|l| l.parents).sum()
    }
}

struct WorkItem<'a> {
    level: u32,
    stage: Stage,
    network: u8,
    table: ProbabilityTable,
    symbols: &'a [u8],
}

struct CodedStage {
    level: u32,
    network: u8,
    bytes: Vec<u8>,
}

fn code_item(item: WorkItem<'_>) -> Result<CodedStage, CodecError> {
    let err = |source| CodecError::Chunk {
        level: item.level,
        stage: item.stage.index() + 1,
        source,
    };
    let freqs = item.table.quantize().map_err(err)?;
    let chunk = entropy::encode_symbols(item.symbols, &freqs).map_err(err)?;
    Ok(CodedStage {
        level: item.level,
        network: item.network,
        bytes: chunk.bytes,
    })
}

/// Runs the context model over every level, in coding order, handing each
/// stage's table to `sink`.
fn produce<'h>(
    model: &CodecModel,
    hier: &'h Hierarchy,
    sink: &mut dyn FnMut(WorkItem<'h>) -> Result<(), CodecError>,
) -> Result<(), CodecError> {
    let depth = hier.bit_depth();
    let mut session = model.session();
    for b in BASE_LEVEL..depth {
        let labels = hier.labels(b);
        let network = model.select(b, labels)?;
        let network = u8::try_from(network).map_err(|_| CodecError::Header(format!("network index {network}")))?;
        session.begin_level(hier.level(b), network as usize)?;
        for stage in Stage::BOTH {
            let symbols = labels.stage(stage);
            let table = {
                let mut pred = session.predict_stage(stage)?;
                materialize(pred.as_mut(), symbols)?
            };
            sink(WorkItem {
                level: b,
                stage,
                network,
                table,
                symbols,
            })?;
            session.absorb_stage(stage, symbols)?;
        }
        session.end_level(labels.octants(), b + 1 < depth)?;
    }
    Ok(())
}

fn code_all(model: &CodecModel, hier: &Hierarchy, opts: &EncodeOptions) -> Result<Vec<CodedStage>, CodecError> {
    match opts.mode {
        EncodeMode::Sync => {
            let mut out = Vec::new();
            produce(model, hier, &mut |item| {
                out.push(code_item(item)?);
                Ok(())
            })?;
            Ok(out)
        }
        EncodeMode::Pipelined => thread::scope(|s| {
            let (tx, rx) = sync_channel::<WorkItem<'_>>(opts.queue_depth.max(1));
            let coder = s.spawn(move || -> Result<Vec<CodedStage>, CodecError> {
                let mut out = Vec::new();
                for item in rx {
                    out.push(code_item(item)?);
                }
                Ok(out)
            });
            let produced = produce(model, hier, &mut |item| {
                tx.send(item)
                    .map_err(|_| CodecError::Pipeline("coder stopped early".into()))
            });
            drop(tx);
            let coded = coder
                .join()
                .map_err(|_| CodecError::Pipeline("coder thread panicked".into()))?;
            // a coder failure is the root cause of a failed send
            let coded = coded?;
            produced?;
            Ok(coded)
        }),
    }
}

/// Encodes `cloud` into a self-contained container.
pub fn encode(
    cloud: &QuantizedCloud,
    model: &CodecModel,
    opts: &EncodeOptions,
) -> Result<(Vec<u8>, EncodeReport), CodecError> {
    if cloud.is_empty() {
        return Err(CloudError::Empty.into());
    }
    let depth = cloud.bit_depth();
    let mut hier = Hierarchy::build(cloud.coords(), depth, opts.ordering)?;
    let mut sort_count = hier.sort_count();
    if opts.ordering == OrderingMode::ExplicitSort {
        for b in BASE_LEVEL..depth {
            explicit_sort(hier.level_mut(b));
            sort_count += 1;
        }
    }
    let coded = code_all(model, &hier, opts)?;

    let header = Header {
        version: VERSION,
        bit_depth: depth,
        dim: u16::try_from(model.dim()).map_err(|_| CodecError::Header("dimension too large".into()))?,
        pool: u8::try_from(model.pool_size()).map_err(|_| CodecError::Header("pool too large".into()))?,
        digest: model.digest(),
        grid: cloud.grid(),
        base: hier.level(BASE_LEVEL).coords().to_vec(),
    };
    let mut out = Vec::new();
    header.write(&mut out);
    let header_bytes = out.len();
    let mut levels = Vec::with_capacity(coded.len() / 2);
    let mut index_bytes = 0;
    for pair in coded.chunks_exact(2) {
        let (s1, s2) = (&pair[0], &pair[1]);
        debug_assert_eq!(s1.level, s2.level);
        let before = out.len();
        container::write_level(&mut out, s1.level, s1.network, [&s1.bytes, &s2.bytes]);
        index_bytes += out.len() - before - 8 - s1.bytes.len() - s2.bytes.len();
        levels.push(LevelReport {
            level: s1.level,
            parents: hier.level(s1.level).len(),
            network: s1.network,
            stage_bytes: [s1.bytes.len(), s2.bytes.len()],
        });
    }
    container::seal(&mut out);
    let report = EncodeReport {
        bit_depth: depth,
        points: cloud.len(),
        container_bytes: out.len(),
        header_bytes,
        index_bytes,
        framing_bytes: 8 * levels.len(),
        crc_bytes: 4,
        levels,
        sort_count,
    };
    Ok((out, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeReport {
    pub sort_count: usize,
}

fn check_model(header: &Header, model: &CodecModel) -> Result<(), CodecError> {
    if header.pool as usize != model.pool_size() {
        return Err(CodecError::ModelMismatch(format!(
            "stream uses a pool of {} networks, model has {}",
            header.pool,
            model.pool_size()
        )));
    }
    if header.dim as usize != model.dim() {
        return Err(CodecError::ModelMismatch(format!(
            "stream uses dimension {}, model has {}",
            header.dim,
            model.dim()
        )));
    }
    if header.digest != model.digest() {
        return Err(CodecError::ModelMismatch("model digest differs".into()));
    }
    Ok(())
}

fn decode_stage(
    session: &mut (dyn ContextModel + Send + '_),
    level: u32,
    stage: Stage,
    bytes: &[u8],
) -> Result<Vec<u8>, CodecError> {
    let err = |source| CodecError::Chunk {
        level,
        stage: stage.index() + 1,
        source,
    };
    let mut pred = session.predict_stage(stage)?;
    let mut dec = RangeDecoder::new(bytes).map_err(err)?;
    let n = pred.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = pred.row(i);
        let freq = quantize_row(&row).ok_or(ModelError::NonFinite)?;
        let s = dec.decode(&freq).map_err(err)?;
        pred.observe(i, s);
        out.push(s);
    }
    if dec.finish().map_err(err)? != bytes.len() {
        return Err(err(EntropyError::Corrupt));
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], model: &CodecModel) -> Result<QuantizedCloud, CodecError> {
    decode_with(bytes, model, OrderingMode::Morton).map(|(c, _)| c)
}

/// Decodes with an explicit ordering mode; `ExplicitSort` re-sorts every
/// reconstructed level and reports the count.
pub fn decode_with(
    bytes: &[u8],
    model: &CodecModel,
    ordering: OrderingMode,
) -> Result<(QuantizedCloud, DecodeReport), CodecError> {
    let (header, entries) = container::parse(bytes)?;
    check_model(&header, model)?;
    let mut level = LevelState::from_morton_sorted(BASE_LEVEL, header.base.clone())
        .map_err(|e| CodecError::Header(format!("base voxels: {e}")))?;
    let depth = header.bit_depth;
    let mut sorts = 0;
    let mut session = model.session();
    for entry in &entries {
        let b = entry.level;
        let index = entry.index.unwrap_or(0);
        if index as usize > model.max_network() {
            return Err(CodecError::BadIndex {
                level: b,
                index,
                available: model.max_network() + 1,
            });
        }
        session.begin_level(&level, index as usize)?;
        let q1 = decode_stage(session.as_mut(), b, Stage::First, entry.stages[0])?;
        session.absorb_stage(Stage::First, &q1)?;
        let q2 = decode_stage(session.as_mut(), b, Stage::Second, entry.stages[1])?;
        session.absorb_stage(Stage::Second, &q2)?;
        let octants: Vec<u8> = q1.iter().zip(&q2).map(|(&a, &c)| (c << 4) | a).collect();
        if octants.contains(&0) {
            return Err(CodecError::EmptyOctant(b));
        }
        session.end_level(&octants, b + 1 < depth)?;
        level = expand_from_octants(&level, &octants)?;
        if ordering == OrderingMode::ExplicitSort {
            explicit_sort(&mut level);
            sorts += 1;
        }
    }
    let cloud = QuantizedCloud::from_sorted_unchecked(level.into_coords(), depth, header.grid);
    Ok((cloud, DecodeReport { sort_count: sorts }))
}

/// Ideal code length of every voxel at level `level` (both stages), from
/// the same quantized tables the encoder codes with.
pub fn per_point_bits(cloud: &QuantizedCloud, model: &CodecModel, level: u32) -> Result<Vec<f64>, CodecError> {
    let [s1, s2] = stage_bits(cloud, model, level)?;
    Ok(s1.iter().zip(&s2).map(|(a, b)| a + b).collect())
}

/// [`per_point_bits`] split by stage.
pub fn stage_bits(cloud: &QuantizedCloud, model: &CodecModel, level: u32) -> Result<[Vec<f64>; 2], CodecError> {
    let depth = cloud.bit_depth();
    if !(BASE_LEVEL..depth).contains(&level) {
        return Err(CodecError::Header(format!(
            "level {level} is not coded at bit-depth {depth}"
        )));
    }
    let hier = Hierarchy::build(cloud.coords(), depth, OrderingMode::Morton)?;
    let mut bits = [Vec::new(), Vec::new()];
    produce(model, &hier, &mut |item| {
        if item.level == level {
            let freqs = item.table.quantize().map_err(|source| CodecError::Chunk {
                level,
                stage: item.stage.index() + 1,
                source,
            })?;
            bits[item.stage.index()] = item
                .symbols
                .iter()
                .zip(&freqs)
                .map(|(&s, f)| symbol_bits(f[s as usize]))
                .collect();
        }
        Ok(())
    })?;
    Ok(bits)
}
