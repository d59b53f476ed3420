use crate::entropy::SYMBOLS;
use crate::hierarchy::{LevelState, Stage};

use super::{ContextModel, ModelError, StagePredictor};

const STAGE1_CELLS: usize = 8;
const STAGE2_CELLS: usize = 8 * SYMBOLS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Cell {
    counts: [u32; SYMBOLS],
    total: u32,
}

impl Cell {
    const EMPTY: Cell = Cell {
        counts: [0; SYMBOLS],
        total: 0,
    };

    fn probs(&self) -> [f64; SYMBOLS] {
        let denom = (self.total + SYMBOLS as u32) as f64;
        self.counts.map(|c| (c + 1) as f64 / denom)
    }

    fn add(&mut self, symbol: u8) {
        self.counts[symbol as usize] += 1;
        self.total += 1;
    }
}

/// Adaptive Laplace-smoothed frequency counts per (level, stage, context).
///
/// The context of stage 1 is the voxel's octant parity; stage 2 adds the
/// voxel's stage-1 symbol. Each level starts from empty counts.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    parities: Vec<u8>,
    stage1: Option<Vec<u8>>,
    cells: [Vec<Cell>; 2],
    next: Stage,
}

impl BaselineModel {
    pub fn new() -> Self {
        BaselineModel {
            parities: Vec::new(),
            stage1: None,
            cells: [vec![Cell::EMPTY; STAGE1_CELLS], vec![Cell::EMPTY; STAGE2_CELLS]],
            next: Stage::First,
        }
    }

    /// Counts of every cell, stage 1 cells first.
    pub fn snapshot(&self) -> Vec<[u32; SYMBOLS]> {
        self.cells.iter().flatten().map(|c| c.counts).collect()
    }

    fn contexts(&self, stage: Stage) -> Vec<usize> {
        match stage {
            Stage::First => self.parities.iter().map(|&p| p as usize).collect(),
            Stage::Second => {
                let q1 = self.stage1.as_deref().unwrap_or(&[]);
                self.parities
                    .iter()
                    .zip(q1)
                    .map(|(&p, &s)| p as usize * SYMBOLS + s as usize)
                    .collect()
            }
        }
    }
}

impl Default for BaselineModel {
    fn default() -> Self {
        Self::new()
    }
}

struct AdaptivePredictor<'a> {
    cells: &'a mut [Cell],
    ctx: Vec<usize>,
}

impl StagePredictor for AdaptivePredictor<'_> {
    fn len(&self) -> usize {
        self.ctx.len()
    }

    fn row(&mut self, n: usize) -> [f64; SYMBOLS] {
        self.cells[self.ctx[n]].probs()
    }

    fn observe(&mut self, n: usize, symbol: u8) {
        self.cells[self.ctx[n]].add(symbol);
    }
}

impl ContextModel for BaselineModel {
    fn begin_level(&mut self, level: &LevelState, _network: usize) -> Result<(), ModelError> {
        self.parities = level.parities();
        self.stage1 = None;
        for cells in &mut self.cells {
            cells.fill(Cell::EMPTY);
        }
        self.next = Stage::First;
        Ok(())
    }

    fn predict_stage(&mut self, stage: Stage) -> Result<Box<dyn StagePredictor + '_>, ModelError> {
        if stage != self.next {
            return Err(ModelError::Order { stage });
        }
        let ctx = self.contexts(stage);
        Ok(Box::new(AdaptivePredictor {
            cells: &mut self.cells[stage.index()],
            ctx,
        }))
    }

    fn absorb_stage(&mut self, stage: Stage, symbols: &[u8]) -> Result<(), ModelError> {
        if stage != self.next {
            return Err(ModelError::Order { stage });
        }
        if symbols.len() != self.parities.len() {
            return Err(ModelError::Count {
                expected: self.parities.len(),
                got: symbols.len(),
            });
        }
        if stage == Stage::First {
            self.stage1 = Some(symbols.to_vec());
            self.next = Stage::Second;
        }
        Ok(())
    }

    fn end_level(&mut self, _octants: &[u8], _propagate: bool) -> Result<(), ModelError> {
        self.next = Stage::First;
        Ok(())
    }
}
