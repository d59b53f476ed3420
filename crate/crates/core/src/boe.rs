//! Bag-of-Encoders: pick one coding network per level from a small pool.
//!
//! Each level is summarized by the normalized histograms of its two stage
//! symbols. Shallow levels always use the base network; deeper levels use the
//! network whose K-means center is nearest to the level's descriptor. The
//! chosen index is written to the bitstream, so the decoder never needs the
//! descriptor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Levels up to and including this one use the base network.
pub const SHALLOW_MAX_LEVEL: u32 = 6;
pub const DESCRIPTOR_LEN: usize = 32;

const MAX_ITERATIONS: usize = 100;
const REL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoeError {
    #[error("descriptor needs at least one symbol per stage (got {q1} and {q2})")]
    Empty { q1: usize, q2: usize },
    #[error("{have} descriptors cannot make {k} centers")]
    TooFewDescriptors { have: usize, k: usize },
    #[error("level {0} needs a descriptor")]
    MissingDescriptor(u32),
    #[error("no BoE centers available for level {0}")]
    NoCenters(u32),
}

/// Concatenated stage-1 and stage-2 histograms, normalized to sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupancyDescriptor(pub [f64; DESCRIPTOR_LEN]);

pub fn descriptor(q1: &[u8], q2: &[u8]) -> Result<OccupancyDescriptor, BoeError> {
    if q1.is_empty() || q1.len() != q2.len() {
        return Err(BoeError::Empty {
            q1: q1.len(),
            q2: q2.len(),
        });
    }
    let mut counts = [0u64; DESCRIPTOR_LEN];
    for &s in q1 {
        counts[(s & 0x0f) as usize] += 1;
    }
    for &s in q2 {
        counts[16 + (s & 0x0f) as usize] += 1;
    }
    let total = (q1.len() + q2.len()) as f64;
    Ok(OccupancyDescriptor(counts.map(|c| c as f64 / total)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoECenters {
    centers: Vec<[f64; DESCRIPTOR_LEN]>,
}

impl BoECenters {
    pub fn new(centers: Vec<[f64; DESCRIPTOR_LEN]>) -> Self {
        BoECenters { centers }
    }

    pub fn centers(&self) -> &[[f64; DESCRIPTOR_LEN]] {
        &self.centers
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Index of the nearest center; ties go to the lowest index.
    pub fn nearest(&self, h: &[f64; DESCRIPTOR_LEN]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in self.centers.iter().enumerate() {
            let d = sq_dist(h, c);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        best.map(|(k, _)| k)
    }
}

fn sq_dist(a: &[f64; DESCRIPTOR_LEN], b: &[f64; DESCRIPTOR_LEN]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Network index for level `level`: 0 for shallow levels, otherwise one plus
/// the nearest center.
pub fn select(
    level: u32,
    desc: Option<&OccupancyDescriptor>,
    centers: &BoECenters,
) -> Result<usize, BoeError> {
    if level <= SHALLOW_MAX_LEVEL {
        return Ok(0);
    }
    let h = desc.ok_or(BoeError::MissingDescriptor(level))?;
    centers
        .nearest(&h.0)
        .map(|k| k + 1)
        .ok_or(BoeError::NoCenters(level))
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centers: BoECenters,
    /// Inertia after each Lloyd iteration.
    pub inertia: Vec<f64>,
}

/// Lloyd's K-means with seeded k-means++ initialization.
pub fn fit_centers(
    descriptors: &[[f64; DESCRIPTOR_LEN]],
    k: usize,
    seed: u64,
) -> Result<KMeansFit, BoeError> {
    if k == 0 || descriptors.len() < k {
        return Err(BoeError::TooFewDescriptors {
            have: descriptors.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(k);
    centers.push(descriptors[rng.random_range(0..descriptors.len())]);
    let mut d2: Vec<f64> = descriptors.iter().map(|h| sq_dist(h, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = descriptors.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..descriptors.len())
        };
        let c = descriptors[pick];
        for (h, d) in descriptors.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(h, &c));
        }
        centers.push(c);
    }

    let mut assignment = vec![0usize; descriptors.len()];
    let mut inertia_curve = Vec::new();
    let mut previous = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let model = BoECenters::new(centers.clone());
        let mut inertia = 0.0;
        for (i, h) in descriptors.iter().enumerate() {
            let a = model.nearest(h).unwrap();
            assignment[i] = a;
            inertia += sq_dist(h, &centers[a]);
        }
        inertia_curve.push(inertia);

        let mut sums = vec![[0f64; DESCRIPTOR_LEN]; k];
        let mut counts = vec![0usize; k];
        for (h, &a) in descriptors.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(h) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].map(|s| s / counts[c] as f64);
            }
        }
        // re-seed empty clusters with the point farthest from its center
        for c in 0..k {
            if counts[c] == 0 {
                let (far, _) = descriptors
                    .iter()
                    .enumerate()
                    .map(|(i, h)| (i, sq_dist(h, &centers[assignment[i]])))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
                centers[c] = descriptors[far];
                assignment[far] = c;
            }
        }
        if previous.is_finite() {
            let change = (previous - inertia).abs() / previous.max(f64::MIN_POSITIVE);
            if change < REL_TOLERANCE {
                break;
            }
        }
        previous = inertia;
    }
    Ok(KMeansFit {
        centers: BoECenters::new(centers),
        inertia: inertia_curve,
    })
}
