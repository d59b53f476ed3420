use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::network::{head_logits, init_network, refine, Layout};
use super::ops::{self, Neighbors};
use super::{file, ContextModel, ModelError, StagePredictor, TablePredictor};
use crate::boe::BoECenters;
use crate::entropy::SYMBOLS;
use crate::hierarchy::{parent_index, LevelState, Stage};

/// A pool of coding networks (base network first, then one per BoE center)
/// with their centers.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    layout: Layout,
    networks: Vec<Vec<f32>>,
    centers: BoECenters,
    digest: [u8; 8],
}

impl NeuralModel {
    pub fn new(dim: usize, networks: Vec<Vec<f32>>, centers: BoECenters) -> Result<Self, ModelError> {
        let layout = Layout::new(dim);
        if dim == 0 || networks.len() != centers.k() + 1 {
            return Err(ModelError::File(format!(
                "{} networks for {} centers at dimension {dim}",
                networks.len(),
                centers.k()
            )));
        }
        for (index, p) in networks.iter().enumerate() {
            if p.len() != layout.len() {
                return Err(ModelError::Parameters {
                    index,
                    dim,
                    expected: layout.len(),
                    got: p.len(),
                });
            }
        }
        // centers are stored as f32, keep the in-memory copy identical
        let centers = BoECenters::new(
            centers
                .centers()
                .iter()
                .map(|c| c.map(|v| v as f32 as f64))
                .collect(),
        );
        let mut model = NeuralModel {
            layout,
            networks,
            centers,
            digest: [0; 8],
        };
        let hash = Sha256::digest(file::to_bytes(&model));
        model.digest.copy_from_slice(&hash[..8]);
        Ok(model)
    }

    /// Freshly initialized pool.
    pub fn init(dim: usize, centers: BoECenters, seed: u64) -> Self {
        let layout = Layout::new(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let networks = (0..=centers.k()).map(|_| init_network(layout, &mut rng)).collect();
        Self::new(dim, networks, centers).expect("consistent shapes")
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn pool_size(&self) -> usize {
        self.centers.k()
    }

    pub fn networks(&self) -> &[Vec<f32>] {
        &self.networks
    }

    pub fn centers(&self) -> &BoECenters {
        &self.centers
    }

    /// First 8 bytes of the SHA-256 of the serialized model.
    pub fn digest(&self) -> [u8; 8] {
        self.digest
    }
}

struct Current {
    network: usize,
    nbrs: Neighbors,
    features: Vec<f32>,
    /// `None` once both stages are absorbed.
    next: Option<Stage>,
}

/// One coding pass over a cloud with a [`NeuralModel`].
pub struct NeuralSession<'m> {
    model: &'m NeuralModel,
    prop: Option<Vec<f32>>,
    current: Option<Current>,
}

impl<'m> NeuralSession<'m> {
    pub fn new(model: &'m NeuralModel) -> Self {
        NeuralSession {
            model,
            prop: None,
            current: None,
        }
    }

    fn current(&mut self, stage: Stage) -> Result<&mut Current, ModelError> {
        match self.current.as_mut() {
            Some(c) if c.next == Some(stage) => Ok(c),
            _ => Err(ModelError::Order { stage }),
        }
    }
}

fn probabilities(logits: &[f32]) -> Result<Vec<[f64; SYMBOLS]>, ModelError> {
    let probs = ops::softmax(logits, SYMBOLS);
    probs
        .chunks_exact(SYMBOLS)
        .map(|r| {
            let mut row = [0.0; SYMBOLS];
            for (o, &v) in row.iter_mut().zip(r) {
                if !v.is_finite() {
                    return Err(ModelError::NonFinite);
                }
                *o = v as f64;
            }
            Ok(row)
        })
        .collect()
}

impl ContextModel for NeuralSession<'_> {
    fn begin_level(&mut self, level: &LevelState, network: usize) -> Result<(), ModelError> {
        let pool = self.model.networks.len();
        let p = self
            .model
            .networks
            .get(network)
            .ok_or(ModelError::Network { index: network, pool })?;
        let layout = self.model.layout;
        let d = layout.dim;
        let nbrs = Neighbors::build(level.coords(), level.level());
        let oct = ops::embed(&p[layout.octant()], &level.parities(), d);
        let fused = match self.prop.take() {
            Some(prop) => {
                if prop.len() != oct.len() {
                    return Err(ModelError::Propagation {
                        expected: level.len(),
                        got: prop.len() / d,
                    });
                }
                ops::gated_fuse(&oct, &prop, &p[layout.gate()], d)
            }
            None => oct,
        };
        let features = refine(p.as_slice(), layout, 0, fused, &nbrs, None);
        self.current = Some(Current {
            network,
            nbrs,
            features,
            next: Some(Stage::First),
        });
        Ok(())
    }

    fn predict_stage(&mut self, stage: Stage) -> Result<Box<dyn StagePredictor + '_>, ModelError> {
        let model = self.model;
        let c = self.current(stage)?;
        let (logits, _) = head_logits(
            model.networks[c.network].as_slice(),
            model.layout,
            stage.index(),
            &c.features,
        );
        Ok(Box::new(TablePredictor::new(probabilities(&logits)?)))
    }

    fn absorb_stage(&mut self, stage: Stage, symbols: &[u8]) -> Result<(), ModelError> {
        let model = self.model;
        let layout = model.layout;
        let c = self.current(stage)?;
        let n = c.features.len() / layout.dim;
        if symbols.len() != n {
            return Err(ModelError::Count {
                expected: n,
                got: symbols.len(),
            });
        }
        let p = model.networks[c.network].as_slice();
        ops::add_context(&mut c.features, &p[layout.context(stage.index())], symbols, layout.dim);
        if stage == Stage::First {
            let f = std::mem::take(&mut c.features);
            c.features = refine(p, layout, 1, f, &c.nbrs, None);
            c.next = Some(Stage::Second);
        } else {
            c.next = None;
        }
        Ok(())
    }

    fn end_level(&mut self, octants: &[u8], propagate: bool) -> Result<(), ModelError> {
        let model = self.model;
        let layout = model.layout;
        let c = match self.current.take() {
            Some(c) if c.next.is_none() => c,
            _ => {
                return Err(ModelError::Order {
                    stage: Stage::Second,
                })
            }
        };
        if octants.len() != c.nbrs.len() {
            return Err(ModelError::Count {
                expected: c.nbrs.len(),
                got: octants.len(),
            });
        }
        if propagate {
            let p = model.networks[c.network].as_slice();
            let f = refine(p, layout, 2, c.features, &c.nbrs, None);
            self.prop = Some(ops::gather_rows(&f, &parent_index(octants), layout.dim));
        }
        Ok(())
    }
}
