//! Deterministic LiDAR-like scenes.
//!
//! A sensor at the origin sweeps beams that hit a flat ground `height` below
//! it on concentric rings. Ring radii grow geometrically, so every ring gets
//! the same number of returns and density falls off with distance. Random
//! boxes standing on the ground catch the beams that reach them first.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::RawCloud;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingScanConfig {
    pub rings: usize,
    pub points_per_ring: usize,
    /// Standard deviation of the vertical noise in meters.
    pub noise: f64,
    pub seed: u64,
    pub boxes: usize,
    pub sensor_height: f64,
    pub first_radius: f64,
    pub ring_growth: f64,
}

impl Default for RingScanConfig {
    fn default() -> Self {
        RingScanConfig {
            rings: 32,
            points_per_ring: 1024,
            noise: 0.02,
            seed: 0,
            boxes: 12,
            sensor_height: 1.8,
            first_radius: 3.0,
            ring_growth: 1.06,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Obstacle {
    lo: [f64; 2],
    hi: [f64; 2],
    height: f64,
}

impl Obstacle {
    /// Horizontal distance where a beam toward azimuth `dir` that would land
    /// at distance `r` first touches the box, if it does before landing.
    fn hit(&self, dir: [f64; 2], r: f64, sensor_height: f64) -> Option<f64> {
        let mut t_in = 0.0f64;
        let mut t_out = r;
        for a in 0..2 {
            if dir[a].abs() < 1e-12 {
                if 0.0 < self.lo[a] || 0.0 > self.hi[a] {
                    return None;
                }
                continue;
            }
            let t0 = self.lo[a] / dir[a];
            let t1 = self.hi[a] / dir[a];
            t_in = t_in.max(t0.min(t1));
            t_out = t_out.min(t0.max(t1));
        }
        if t_in > t_out {
            return None;
        }
        // the beam is below the roof from here on
        let below_roof = r * (1.0 - self.height / sensor_height);
        let t = t_in.max(below_roof);
        (t <= t_out && t < r).then_some(t)
    }
}

/// Ring scan with the default scene and the given sampling.
pub fn gen_ring_scan(rings: usize, points_per_ring: usize, noise: f64, seed: u64) -> RawCloud {
    gen_ring_scan_with(&RingScanConfig {
        rings,
        points_per_ring,
        noise,
        seed,
        ..RingScanConfig::default()
    })
}

pub fn gen_ring_scan_with(cfg: &RingScanConfig) -> RawCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = cfg.sensor_height;
    let radii: Vec<f64> = (0..cfg.rings)
        .map(|i| cfg.first_radius * cfg.ring_growth.powi(i as i32))
        .collect();
    let far = radii.last().copied().unwrap_or(cfg.first_radius);

    // the innermost ring stays clear; scans too small for that get no boxes
    let near = 1.5 * cfg.first_radius;
    let boxes = if far > near { cfg.boxes } else { 0 };
    let mut obstacles = Vec::with_capacity(boxes);
    for _ in 0..boxes {
        let dist = rng.random_range(near..far);
        let angle = rng.random_range(0.0..TAU);
        let half = [rng.random_range(0.4..2.5), rng.random_range(0.4..2.5)];
        let c = [dist * angle.cos(), dist * angle.sin()];
        obstacles.push(Obstacle {
            lo: [c[0] - half[0], c[1] - half[1]],
            hi: [c[0] + half[0], c[1] + half[1]],
            height: rng.random_range(0.8..3.5),
        });
    }

    let normal = Normal::new(0.0, cfg.noise.max(0.0)).unwrap();
    let mut points = Vec::with_capacity(cfg.rings * cfg.points_per_ring);
    for &r in &radii {
        let phase = rng.random_range(0.0..TAU);
        for j in 0..cfg.points_per_ring {
            let az = phase + TAU * j as f64 / cfg.points_per_ring as f64;
            let dir = [az.cos(), az.sin()];
            let t = obstacles
                .iter()
                .filter_map(|o| o.hit(dir, r, h))
                .fold(r, f64::min);
            let z = -h * t / r;
            let dz = if cfg.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            points.push([t * dir[0], t * dir[1], z + dz]);
        }
    }
    RawCloud::new(points)
}

/// `frames` scans with consecutive seeds, frame `f` shifted by `f * speed`
/// along x.
pub fn gen_sequence(cfg: &RingScanConfig, frames: usize, speed: f64) -> Vec<RawCloud> {
    (0..frames)
        .map(|f| {
            let mut c = gen_ring_scan_with(&RingScanConfig {
                seed: cfg.seed.wrapping_add(f as u64),
                ..*cfg
            });
            for p in &mut c.points {
                p[0] += speed * f as f64;
            }
            c
        })
        .collect()
}

/// Flat square patch `[0, size)^2` sampled uniformly with vertical noise.
pub fn gen_plane(points: usize, size: f64, noise: f64, seed: u64) -> RawCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(0.0)).unwrap();
    RawCloud::new(
        (0..points)
            .map(|_| {
                let z = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                [rng.random_range(0.0..size), rng.random_range(0.0..size), z]
            })
            .collect(),
    )
}
