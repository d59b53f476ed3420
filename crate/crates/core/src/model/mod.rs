//! Context models: per-point symbol distributions for each coding stage.
//!
//! A session is driven level by level, in the same order on both ends:
//! `begin_level`, then for each stage `predict_stage` followed by
//! `absorb_stage`, then `end_level`. The encoder knows every symbol up
//! front and can [`materialize`] a whole table at once; the decoder pulls one
//! row, decodes one symbol and reports it back through `observe`.

mod baseline;
mod file;
mod network;
mod neural;
pub mod ops;
mod train;

use std::sync::Arc;

use thiserror::Error;

use crate::boe::{self, BoeError};
use crate::entropy::{ProbabilityTable, SYMBOLS};
use crate::hierarchy::{LevelState, OccupancySymbols, Stage};

pub use baseline::BaselineModel;
pub use file::{read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use network::{head_logits, init_network, level_backward, level_forward, refine, BlockTape, Layout, LevelData, LevelTape};
pub use neural::{NeuralModel, NeuralSession};
pub use train::{
    cloud_loss, collect_descriptors, prepare_corpus, train, train_pool, TrainConfig, TrainError, TrainReport,
    TrainingCloud,
};

/// Digest written for the baseline model, which has no file.
pub const BASELINE_DIGEST: [u8; 8] = *b"BASELINE";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("stage {stage:?} called out of order")]
    Order { stage: Stage },
    #[error("expected {expected} symbols, got {got}")]
    Count { expected: usize, got: usize },
    #[error("network index {index} outside pool of {pool}")]
    Network { index: usize, pool: usize },
    #[error("propagated features cover {got} voxels, level has {expected}")]
    Propagation { expected: usize, got: usize },
    #[error("network {index} has {got} parameters, dimension {dim} needs {expected}")]
    Parameters {
        index: usize,
        dim: usize,
        expected: usize,
        got: usize,
    },
    #[error("model predicted a non-finite probability")]
    NonFinite,
    #[error("model file: {0}")]
    File(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Boe(#[from] BoeError),
}

/// Row-by-row access to one stage's distributions.
///
/// Rows must be requested in index order, each followed by `observe` with the
/// symbol actually coded, before the next row is requested.
pub trait StagePredictor {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn row(&mut self, n: usize) -> [f64; SYMBOLS];

    fn observe(&mut self, n: usize, symbol: u8);
}

pub trait ContextModel {
    fn begin_level(&mut self, level: &LevelState, network: usize) -> Result<(), ModelError>;

    fn predict_stage(&mut self, stage: Stage) -> Result<Box<dyn StagePredictor + '_>, ModelError>;

    fn absorb_stage(&mut self, stage: Stage, symbols: &[u8]) -> Result<(), ModelError>;

    /// `propagate` is false at the last coded level, where no features are
    /// carried further.
    fn end_level(&mut self, octants: &[u8], propagate: bool) -> Result<(), ModelError>;
}

/// Full table for a stage whose symbols are already known.
pub fn materialize(
    pred: &mut dyn StagePredictor,
    symbols: &[u8],
) -> Result<ProbabilityTable, ModelError> {
    if pred.len() != symbols.len() {
        return Err(ModelError::Count {
            expected: pred.len(),
            got: symbols.len(),
        });
    }
    let mut rows = Vec::with_capacity(symbols.len());
    for (n, &s) in symbols.iter().enumerate() {
        rows.push(pred.row(n));
        pred.observe(n, s);
    }
    ProbabilityTable::new(rows).map_err(|_| ModelError::NonFinite)
}

/// Fixed precomputed rows; observation is a no-op.
pub struct TablePredictor {
    rows: Vec<[f64; SYMBOLS]>,
}

impl TablePredictor {
    pub fn new(rows: Vec<[f64; SYMBOLS]>) -> Self {
        TablePredictor { rows }
    }
}

impl StagePredictor for TablePredictor {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn row(&mut self, n: usize) -> [f64; SYMBOLS] {
        self.rows[n]
    }

    fn observe(&mut self, _n: usize, _symbol: u8) {}
}

/// Model choice shared by encoder and decoder.
#[derive(Debug, Clone)]
pub enum CodecModel {
    Baseline,
    Neural(Arc<NeuralModel>),
}

impl CodecModel {
    /// Number of BoE centers (networks beyond the base one).
    pub fn pool_size(&self) -> usize {
        match self {
            CodecModel::Baseline => 0,
            CodecModel::Neural(m) => m.pool_size(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CodecModel::Baseline => 0,
            CodecModel::Neural(m) => m.dim(),
        }
    }

    pub fn digest(&self) -> [u8; 8] {
        match self {
            CodecModel::Baseline => BASELINE_DIGEST,
            CodecModel::Neural(m) => m.digest(),
        }
    }

    /// Network for level `level` given its ground-truth labels. The baseline
    /// has a single model and always answers 0.
    pub fn select(&self, level: u32, labels: &OccupancySymbols) -> Result<usize, ModelError> {
        match self {
            CodecModel::Baseline => Ok(0),
            CodecModel::Neural(m) => {
                let desc = if level > boe::SHALLOW_MAX_LEVEL {
                    Some(boe::descriptor(labels.stage(Stage::First), labels.stage(Stage::Second))?)
                } else {
                    None
                };
                Ok(boe::select(level, desc.as_ref(), m.centers())?)
            }
        }
    }

    /// Largest valid network index.
    pub fn max_network(&self) -> usize {
        self.pool_size()
    }

    pub fn session(&self) -> Box<dyn ContextModel + Send + '_> {
        match self {
            CodecModel::Baseline => Box::new(BaselineModel::new()),
            CodecModel::Neural(m) => Box::new(NeuralSession::new(m)),
        }
    }
}
