//! Central finite-difference checks of every hand-written backward pass,
//! run in f64 on instances of at most ten voxels with D = 4. Each check
//! returns the worst relative error or a description of the first failure.

use pcc_core::hierarchy::{parent_index, Hierarchy, OrderingMode, Stage};
use pcc_core::model::ops::{self, Neighbors};
use pcc_core::model::{level_backward, level_forward, Layout, LevelData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
const D: usize = 4;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn rel_err(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs());
    if denom < 1e-8 {
        0.0
    } else {
        (a - n).abs() / denom
    }
}

/// Compares `analytic` with central differences of `f` around `x`.
fn check(name: &str, x: &[f64], analytic: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> Result<f64, String> {
    if x.len() != analytic.len() {
        return Err(format!("{name}: gradient length {} vs {}", analytic.len(), x.len()));
    }
    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + H;
        let up = f(&xp);
        xp[i] = x[i] - H;
        let down = f(&xp);
        xp[i] = x[i];
        let numeric = (up - down) / (2.0 * H);
        let e = rel_err(analytic[i], numeric);
        // written so that NaN fails
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(e < TOL) {
            return Err(format!("{name}[{i}]: analytic {} numeric {numeric} (rel {e:e})", analytic[i]));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Ten voxels in a 4^3 grid, some touching, some isolated.
fn small_level() -> (Vec<[u32; 3]>, Neighbors) {
    let coords = vec![
        [0, 0, 0],
        [1, 0, 0],
        [0, 1, 0],
        [1, 1, 1],
        [2, 1, 1],
        [3, 3, 3],
        [0, 3, 0],
        [2, 2, 0],
        [3, 0, 2],
        [1, 2, 3],
    ];
    let n = Neighbors::build(&coords, 2);
    (coords, n)
}

pub fn embed_gradient() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let table = rand_vec(&mut rng, 8 * D, 1.0);
    let idx = [0u8, 5, 5, 7, 2, 0, 1];
    let r = rand_vec(&mut rng, idx.len() * D, 1.0);
    let mut g = vec![0.0; table.len()];
    ops::embed_backward(&mut g, &idx, &r, D);
    check("embed", &table, &g, &mut |t| dot(&ops::embed(t, &idx, D), &r))
}

pub fn context_add_gradient() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let table = rand_vec(&mut rng, 16 * D, 1.0);
    let sym = [3u8, 15, 0, 3, 9];
    let x = rand_vec(&mut rng, sym.len() * D, 1.0);
    let r = rand_vec(&mut rng, x.len(), 1.0);
    let mut g = vec![0.0; table.len()];
    ops::embed_backward(&mut g, &sym, &r, D);
    check("context", &table, &g, &mut |t| {
        let mut y = x.clone();
        ops::add_context(&mut y, t, &sym, D);
        dot(&y, &r)
    })
}

pub fn gated_fuse_gradient() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 6;
    let oct = rand_vec(&mut rng, n * D, 1.0);
    let prop = rand_vec(&mut rng, n * D, 1.0);
    let gate = rand_vec(&mut rng, 2 * D, 2.0);
    let r = rand_vec(&mut rng, n * D, 1.0);
    let mut dgate = vec![0.0; gate.len()];
    let (doct, dprop) = ops::gated_fuse_backward(&oct, &prop, &gate, &r, D, &mut dgate);
    let e0 = check("fuse/gate", &gate, &dgate, &mut |g| dot(&ops::gated_fuse(&oct, &prop, g, D), &r))?;
    let e1 = check("fuse/oct", &oct, &doct, &mut |o| dot(&ops::gated_fuse(o, &prop, &gate, D), &r))?;
    let e2 = check("fuse/prop", &prop, &dprop, &mut |p| dot(&ops::gated_fuse(&oct, p, &gate, D), &r))?;
    Ok(e0.max(e1.max(e2)))
}

pub fn sparse_conv_gradient() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (coords, nbrs) = small_level();
    let n = coords.len();
    let x = rand_vec(&mut rng, n * D, 1.0);
    let w = rand_vec(&mut rng, ops::KERNEL * D * D, 0.5);
    let b = rand_vec(&mut rng, D, 0.5);
    let r = rand_vec(&mut rng, n * D, 1.0);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; b.len()];
    ops::sparse_conv_backward(&x, &nbrs, &w, &r, D, &mut dx, &mut dw, &mut db);
    let e0 = check("conv/x", &x, &dx, &mut |v| dot(&ops::sparse_conv(v, &nbrs, &w, &b, D), &r))?;
    let e1 = check("conv/w", &w, &dw, &mut |v| dot(&ops::sparse_conv(&x, &nbrs, v, &b, D), &r))?;
    let e2 = check("conv/b", &b, &db, &mut |v| dot(&ops::sparse_conv(&x, &nbrs, &w, v, D), &r))?;
    Ok(e0.max(e1.max(e2)))
}

pub fn dense_relu_gradient() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 7;
    let x = rand_vec(&mut rng, n * D, 1.0);
    let w = rand_vec(&mut rng, D * 16, 0.5);
    let b = rand_vec(&mut rng, 16, 0.5);
    let r = rand_vec(&mut rng, n * 16, 1.0);
    let loss = |x: &[f64], w: &[f64], b: &[f64]| {
        let y = ops::dense(&ops::relu(x), w, b, D, 16);
        dot(&y, &r)
    };
    let a = ops::relu(&x);
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; b.len()];
    let mut dx = ops::dense_backward(&a, &w, &r, D, 16, &mut dw, &mut db);
    ops::relu_backward(&x, &mut dx);
    let e0 = check("dense/x", &x, &dx, &mut |v| loss(v, &w, &b))?;
    let e1 = check("dense/w", &w, &dw, &mut |v| loss(&x, v, &b))?;
    let e2 = check("dense/b", &b, &db, &mut |v| loss(&x, &w, v))?;
    Ok(e0.max(e1.max(e2)))
}

pub fn bits_loss_gradient() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 5;
    let z = rand_vec(&mut rng, n * 16, 3.0);
    let t: Vec<u8> = (0..n).map(|_| rng.random_range(0..16)).collect();
    let (_, g) = ops::bits_loss(&z, &t, 16);
    check("softmax-ce", &z, &g, &mut |v| ops::bits_loss(v, &t, 16).0)
}

pub fn replicate_gradient() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let octants = [0b1001_0001u8, 0b0000_0100, 0b1111_0000];
    let parent = parent_index(&octants);
    let x = rand_vec(&mut rng, 3 * D, 1.0);
    let r = rand_vec(&mut rng, parent.len() * D, 1.0);
    let g = ops::scatter_rows(&r, &parent, 3, D);
    check("replicate", &x, &g, &mut |v| dot(&ops::gather_rows(v, &parent, D), &r))
}

/// Two coded levels sharing one network, so gradients from the deeper level
/// reach the shallower one through the propagated features.
fn two_levels() -> Vec<LevelData> {
    let coords: Vec<[u32; 3]> = vec![
        [0, 0, 0],
        [1, 1, 0],
        [2, 3, 1],
        [5, 4, 4],
        [4, 4, 5],
        [15, 15, 15],
        [8, 2, 9],
        [9, 3, 9],
        [7, 0, 3],
        [6, 1, 2],
    ];
    let depth = 4;
    let h = Hierarchy::build(&coords, depth, OrderingMode::Morton).unwrap();
    (2..depth)
        .map(|b| {
            let l = h.level(b);
            let lab = h.labels(b);
            assert!(l.len() <= 10);
            LevelData {
                level: b,
                network: 0,
                parity: l.parities(),
                nbrs: Neighbors::build(l.coords(), b),
                q1: lab.stage(Stage::First).to_vec(),
                q2: lab.stage(Stage::Second).to_vec(),
                child_parent: (b + 1 < depth).then(|| parent_index(lab.octants())),
            }
        })
        .collect()
}

fn forward_all(p: &[f64], layout: Layout, levels: &[LevelData]) -> (f64, Vec<bool>) {
    let mut prop = None;
    let mut loss = 0.0;
    let mut pattern = Vec::new();
    for data in levels {
        let (tape, next) = level_forward(p, layout, data, prop);
        loss += tape.loss;
        pattern.extend(tape.relu_pattern());
        prop = next;
    }
    (loss, pattern)
}

pub fn full_network_gradient() -> Result<f64, String> {
    let layout = Layout::new(D);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = rand_vec(&mut rng, layout.len(), 0.4);
    let levels = two_levels();

    let mut tapes = Vec::new();
    let mut prop = None;
    for data in &levels {
        let (tape, next) = level_forward(&p, layout, data, prop);
        prop = next;
        tapes.push(tape);
    }
    let mut grad = vec![0.0; p.len()];
    let mut dnext = None;
    for (data, tape) in levels.iter().zip(&tapes).rev() {
        dnext = level_backward(&p, &mut grad, layout, data, tape, dnext, 1.0);
    }
    if dnext.is_some() {
        return Err("base level has no propagated input".into());
    }
    if grad[layout.gate()].iter().all(|&g| g == 0.0) || grad[layout.conv_weight(2, 1, 1)].iter().all(|&g| g == 0.0) {
        return Err("gate or last refinement stack received no gradient".into());
    }

    // A stencil that flips a ReLU straddles a kink, where central differences
    // measure an average of two slopes. Such coordinates are re-measured with
    // the largest step (down to 1e-7) that keeps the activation pattern.
    let (_, base) = forward_all(&p, layout, &levels);
    let mut x = p.clone();
    let mut kinked = 0;
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let mut h = H;
        let numeric = loop {
            x[i] = p[i] + h;
            let (up, pu) = forward_all(&x, layout, &levels);
            x[i] = p[i] - h;
            let (down, pd) = forward_all(&x, layout, &levels);
            x[i] = p[i];
            if (pu == base && pd == base) || h < 1e-7 {
                break (up - down) / (2.0 * h);
            }
            h /= 10.0;
        };
        if h < H {
            kinked += 1;
        }
        let e = rel_err(grad[i], numeric);
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(e < TOL) {
            return Err(format!("network[{i}] (h {h:e}): analytic {} numeric {numeric} (rel {e:e})", grad[i]));
        }
        worst = worst.max(e);
    }
    if kinked * 20 >= p.len() {
        return Err(format!("{kinked} of {} stencils hit a kink", p.len()));
    }
    Ok(worst)
}

pub fn propagated_input_gradient() -> Result<f64, String> {
    let layout = Layout::new(D);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = rand_vec(&mut rng, layout.len(), 0.4);
    let levels = two_levels();
    let deep = &levels[1];
    let prop = rand_vec(&mut rng, deep.len() * D, 1.0);
    let (tape, _) = level_forward(&p, layout, deep, Some(prop.clone()));
    let mut grad = vec![0.0; p.len()];
    let dprop = level_backward(&p, &mut grad, layout, deep, &tape, None, 1.0).unwrap();
    check("prop", &prop, &dprop, &mut |v| {
        level_forward(&p, layout, deep, Some(v.to_vec())).0.loss
    })
}


pub type Check = fn() -> Result<f64, String>;

pub const CHECKS: [(&str, Check); 9] = [
    ("octant embedding", embed_gradient),
    ("context embedding", context_add_gradient),
    ("gated fusion", gated_fuse_gradient),
    ("sparse convolution", sparse_conv_gradient),
    ("dense + relu", dense_relu_gradient),
    ("softmax bits", bits_loss_gradient),
    ("replication", replicate_gradient),
    ("full network, two levels", full_network_gradient),
    ("propagated input", propagated_input_gradient),
];
