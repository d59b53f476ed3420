//! Teacher-forced training of a network pool with Adam.
//!
//! One step is one cloud: every level b = 2..B-1 runs forward with the
//! network the BoE policy picks for it, the code length of both stages is
//! summed, and gradients flow back through the replicated features into the
//! levels (and networks) that produced them.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::network::{level_backward, level_forward, Layout, LevelData};
use super::ops::Neighbors;
use super::{ModelError, NeuralModel};
use crate::boe::{self, BoECenters, BoeError, DESCRIPTOR_LEN, SHALLOW_MAX_LEVEL};
use crate::cloud::QuantizedCloud;
use crate::hierarchy::{parent_index, Hierarchy, HierarchyError, OrderingMode, Stage};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("cloud {cloud} has bit-depth {bit_depth}; training needs at least 3")]
    TooShallow { cloud: usize, bit_depth: u32 },
    #[error("non-finite loss at step {step} (cloud {cloud}, level {level})")]
    NonFinite { step: usize, cloud: usize, level: u32 },
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Boe(#[from] BoeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            learning_rate: 5e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Step size at `step`: halved at 60% and again at 85% of the run.
    pub fn rate_at(&self, step: usize) -> f64 {
        let mut lr = self.learning_rate;
        if step * 100 >= self.steps * 60 {
            lr *= 0.5;
        }
        if step * 100 >= self.steps * 85 {
            lr *= 0.5;
        }
        lr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Training loss of every step in bits per point.
    pub loss_bpp: Vec<f64>,
    /// How many level passes each network received.
    pub network_use: Vec<usize>,
}

/// Precomputed per-level inputs of one training cloud.
#[derive(Debug, Clone)]
pub struct TrainingCloud {
    pub levels: Vec<LevelData>,
    pub points: usize,
}

/// Occupancy descriptors of levels 7..B-1 of every cloud.
pub fn collect_descriptors(clouds: &[QuantizedCloud]) -> Result<Vec<[f64; DESCRIPTOR_LEN]>, TrainError> {
    let mut out = Vec::new();
    for cloud in clouds {
        let h = Hierarchy::build(cloud.coords(), cloud.bit_depth(), OrderingMode::Morton)?;
        for b in (SHALLOW_MAX_LEVEL + 1)..cloud.bit_depth() {
            let l = h.labels(b);
            out.push(boe::descriptor(l.stage(Stage::First), l.stage(Stage::Second))?.0);
        }
    }
    Ok(out)
}

pub fn prepare_corpus(clouds: &[QuantizedCloud], centers: &BoECenters) -> Result<Vec<TrainingCloud>, TrainError> {
    let mut corpus = Vec::with_capacity(clouds.len());
    for (i, cloud) in clouds.iter().enumerate() {
        let depth = cloud.bit_depth();
        if depth < 3 {
            return Err(TrainError::TooShallow {
                cloud: i,
                bit_depth: depth,
            });
        }
        let h = Hierarchy::build(cloud.coords(), depth, OrderingMode::Morton)?;
        let mut levels = Vec::new();
        for b in 2..depth {
            let level = h.level(b);
            let labels = h.labels(b);
            let q1 = labels.stage(Stage::First).to_vec();
            let q2 = labels.stage(Stage::Second).to_vec();
            let desc = if b > SHALLOW_MAX_LEVEL {
                Some(boe::descriptor(&q1, &q2)?)
            } else {
                None
            };
            levels.push(LevelData {
                level: b,
                network: boe::select(b, desc.as_ref(), centers)?,
                parity: level.parities(),
                nbrs: Neighbors::build(level.coords(), b),
                q1,
                q2,
                child_parent: (b + 1 < depth).then(|| parent_index(labels.octants())),
            });
        }
        corpus.push(TrainingCloud {
            levels,
            points: cloud.len(),
        });
    }
    Ok(corpus)
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, p: &mut [f32], g: &[f32], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let (b1, b2) = (BETA1 as f32, BETA2 as f32);
        let a = (lr * c2.sqrt() / c1) as f32;
        let eps = (EPSILON * c2.sqrt()) as f32;
        for (((w, &gi), m), v) in p.iter_mut().zip(g).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * gi;
            *v = b2 * *v + (1.0 - b2) * gi * gi;
            *w -= a * *m / (v.sqrt() + eps);
        }
    }
}

/// Loss in bits per point of one cloud and, when `grads` is given, the
/// accumulated parameter gradients of that loss.
pub fn cloud_loss(
    networks: &[Vec<f32>],
    layout: Layout,
    cloud: &TrainingCloud,
    grads: Option<&mut [Vec<f32>]>,
) -> Result<f64, (u32, f64)> {
    let mut tapes = Vec::with_capacity(cloud.levels.len());
    let mut prop = None;
    let mut total = 0.0;
    for data in &cloud.levels {
        let (tape, next) = level_forward(&networks[data.network], layout, data, prop);
        if !tape.loss.is_finite() {
            return Err((data.level, tape.loss));
        }
        total += tape.loss;
        prop = next;
        tapes.push(tape);
    }
    let bpp = total / cloud.points as f64;
    if let Some(grads) = grads {
        let scale = 1.0 / cloud.points as f32;
        let mut dnext = None;
        for (data, tape) in cloud.levels.iter().zip(&tapes).rev() {
            let net = data.network;
            dnext = level_backward(&networks[net], &mut grads[net], layout, data, tape, dnext, scale);
        }
    }
    Ok(bpp)
}

/// Trains every network of `model` on `corpus` and returns the result.
pub fn train(
    model: &NeuralModel,
    corpus: &[TrainingCloud],
    config: &TrainConfig,
) -> Result<(NeuralModel, TrainReport), TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let layout = model.layout();
    let mut networks = model.networks().to_vec();
    let mut adam: Vec<Adam> = networks.iter().map(|p| Adam::new(p.len())).collect();
    let mut grads: Vec<Vec<f32>> = networks.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_c0de);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut report = TrainReport {
        loss_bpp: Vec::with_capacity(config.steps),
        network_use: vec![0; networks.len()],
    };

    for step in 0..config.steps {
        if step % corpus.len() == 0 {
            order.shuffle(&mut rng);
        }
        let ci = order[step % corpus.len()];
        let cloud = &corpus[ci];
        for g in &mut grads {
            g.fill(0.0);
        }
        let bpp = cloud_loss(&networks, layout, cloud, Some(&mut grads)).map_err(|(level, _)| {
            TrainError::NonFinite {
                step,
                cloud: ci,
                level,
            }
        })?;
        let mut used = vec![false; networks.len()];
        for data in &cloud.levels {
            used[data.network] = true;
            report.network_use[data.network] += 1;
        }
        let lr = config.rate_at(step);
        for (k, p) in networks.iter_mut().enumerate() {
            if used[k] {
                adam[k].step(p, &grads[k], lr);
            }
        }
        report.loss_bpp.push(bpp);
    }
    let trained = NeuralModel::new(model.dim(), networks, model.centers().clone())?;
    Ok((trained, report))
}

/// Fits BoE centers on the corpus, initializes a pool of `k + 1` networks
/// and trains it.
pub fn train_pool(
    clouds: &[QuantizedCloud],
    dim: usize,
    k: usize,
    config: &TrainConfig,
) -> Result<(NeuralModel, TrainReport), TrainError> {
    if clouds.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let descriptors = collect_descriptors(clouds)?;
    let centers = boe::fit_centers(&descriptors, k, config.seed)?.centers;
    let model = NeuralModel::init(dim, centers, config.seed);
    let corpus = prepare_corpus(clouds, model.centers())?;
    train(&model, &corpus, config)
}
