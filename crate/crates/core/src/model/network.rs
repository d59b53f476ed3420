//! Parameter layout of one coding network and its per-level computation.
//!
//! Parameters live in one flat vector in this order: octant table (8xD),
//! gate (2xD), three refinement stacks of two residual blocks of two
//! convolutions (27xDxD weights then D biases each), two prediction heads
//! (DxD, D, Dx16, 16) and two context tables (16xD).

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::ops::{self, Neighbors, Real, KERNEL};
use crate::entropy::SYMBOLS;

const STACKS: usize = 3;
const BLOCKS: usize = 2;
const CONVS: usize = STACKS * BLOCKS * 2;
const EMBED_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub dim: usize,
}

impl Layout {
    pub fn new(dim: usize) -> Self {
        Layout { dim }
    }

    fn conv_len(&self) -> usize {
        KERNEL * self.dim * self.dim + self.dim
    }

    fn head_len(&self) -> usize {
        let d = self.dim;
        d * d + d + d * SYMBOLS + SYMBOLS
    }

    pub fn octant(&self) -> Range<usize> {
        0..8 * self.dim
    }

    pub fn gate(&self) -> Range<usize> {
        8 * self.dim..10 * self.dim
    }

    fn conv_base(&self, stack: usize, block: usize, layer: usize) -> usize {
        10 * self.dim + ((stack * BLOCKS + block) * 2 + layer) * self.conv_len()
    }

    pub fn conv_weight(&self, stack: usize, block: usize, layer: usize) -> Range<usize> {
        let b = self.conv_base(stack, block, layer);
        b..b + KERNEL * self.dim * self.dim
    }

    pub fn conv_bias(&self, stack: usize, block: usize, layer: usize) -> Range<usize> {
        let b = self.conv_base(stack, block, layer) + KERNEL * self.dim * self.dim;
        b..b + self.dim
    }

    fn head_base(&self, head: usize) -> usize {
        10 * self.dim + CONVS * self.conv_len() + head * self.head_len()
    }

    /// `(w1, b1, w2, b2)` of a prediction head.
    pub fn head(&self, head: usize) -> [Range<usize>; 4] {
        let d = self.dim;
        let b = self.head_base(head);
        let w1 = b..b + d * d;
        let b1 = w1.end..w1.end + d;
        let w2 = b1.end..b1.end + d * SYMBOLS;
        let b2 = w2.end..w2.end + SYMBOLS;
        [w1, b1, w2, b2]
    }

    pub fn context(&self, stage: usize) -> Range<usize> {
        let b = self.head_base(2) + stage * SYMBOLS * self.dim;
        b..b + SYMBOLS * self.dim
    }

    pub fn len(&self) -> usize {
        self.context(1).end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fresh parameters: Xavier-uniform dense and conv weights, zero biases and
/// gate, N(0, 0.02) embedding tables.
pub fn init_network<R: Rng>(layout: Layout, rng: &mut R) -> Vec<f32> {
    let d = layout.dim;
    let mut p = vec![0f32; layout.len()];
    let normal = Normal::new(0.0, EMBED_STD).unwrap();
    let fill_normal = |p: &mut [f32], rng: &mut R| {
        for v in p {
            *v = normal.sample(rng) as f32;
        }
    };
    fill_normal(&mut p[layout.octant()], rng);
    for s in 0..2 {
        fill_normal(&mut p[layout.context(s)], rng);
    }
    let xavier = |p: &mut [f32], fan_in: usize, fan_out: usize, rng: &mut R| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let u = Uniform::new_inclusive(-a, a).unwrap();
        for v in p {
            *v = u.sample(rng) as f32;
        }
    };
    for s in 0..STACKS {
        for b in 0..BLOCKS {
            for l in 0..2 {
                xavier(&mut p[layout.conv_weight(s, b, l)], KERNEL * d, KERNEL * d, rng);
            }
        }
    }
    for h in 0..2 {
        let [w1, _, w2, _] = layout.head(h);
        xavier(&mut p[w1], d, d, rng);
        xavier(&mut p[w2], d, SYMBOLS, rng);
    }
    p
}

/// Inputs of one block kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockTape<T> {
    x: Vec<T>,
    h: Vec<T>,
    a: Vec<T>,
}

/// Two residual blocks `x + conv(relu(conv(x)))`.
pub fn refine<T: Real>(
    p: &[T],
    layout: Layout,
    stack: usize,
    x: Vec<T>,
    nbrs: &Neighbors,
    mut tape: Option<&mut Vec<BlockTape<T>>>,
) -> Vec<T> {
    let d = layout.dim;
    let mut x = x;
    for b in 0..BLOCKS {
        let h = ops::sparse_conv(
            &x,
            nbrs,
            &p[layout.conv_weight(stack, b, 0)],
            &p[layout.conv_bias(stack, b, 0)],
            d,
        );
        let a = ops::relu(&h);
        let y = ops::sparse_conv(
            &a,
            nbrs,
            &p[layout.conv_weight(stack, b, 1)],
            &p[layout.conv_bias(stack, b, 1)],
            d,
        );
        let out: Vec<T> = x.iter().zip(&y).map(|(&u, &v)| u + v).collect();
        if let Some(t) = tape.as_mut() {
            t.push(BlockTape { x, h, a });
        }
        x = out;
    }
    x
}

fn refine_backward<T: Real>(
    p: &[T],
    grad: &mut [T],
    layout: Layout,
    stack: usize,
    tape: &[BlockTape<T>],
    g: Vec<T>,
    nbrs: &Neighbors,
) -> Vec<T> {
    let d = layout.dim;
    let mut g = g;
    for b in (0..BLOCKS).rev() {
        let t = &tape[b];
        let mut da = vec![T::zero(); g.len()];
        {
            let (dw, db) = conv_grads(grad, layout, stack, b, 1);
            ops::sparse_conv_backward(&t.a, nbrs, &p[layout.conv_weight(stack, b, 1)], &g, d, &mut da, dw, db);
        }
        ops::relu_backward(&t.h, &mut da);
        let mut dx = g;
        let (dw, db) = conv_grads(grad, layout, stack, b, 0);
        ops::sparse_conv_backward(&t.x, nbrs, &p[layout.conv_weight(stack, b, 0)], &da, d, &mut dx, dw, db);
        g = dx;
    }
    g
}

fn conv_grads<T>(grad: &mut [T], layout: Layout, stack: usize, block: usize, layer: usize) -> (&mut [T], &mut [T]) {
    let w = layout.conv_weight(stack, block, layer);
    let b = layout.conv_bias(stack, block, layer);
    debug_assert_eq!(w.end, b.start);
    let (dw, db) = grad[w.start..b.end].split_at_mut(w.len());
    (dw, db)
}

#[derive(Debug, Clone)]
pub struct HeadTape<T> {
    x: Vec<T>,
    z: Vec<T>,
    a: Vec<T>,
}

/// Logits of a prediction head (softmax is applied by the caller).
pub fn head_logits<T: Real>(p: &[T], layout: Layout, head: usize, x: &[T]) -> (Vec<T>, HeadTape<T>) {
    let d = layout.dim;
    let [w1, b1, w2, b2] = layout.head(head);
    let z = ops::dense(x, &p[w1], &p[b1], d, d);
    let a = ops::relu(&z);
    let logits = ops::dense(&a, &p[w2], &p[b2], d, SYMBOLS);
    (logits, HeadTape { x: x.to_vec(), z, a })
}

fn head_backward<T: Real>(p: &[T], grad: &mut [T], layout: Layout, head: usize, tape: &HeadTape<T>, g: &[T]) -> Vec<T> {
    let d = layout.dim;
    let [w1, b1, w2, b2] = layout.head(head);
    let (rest, db2) = grad[..b2.end].split_at_mut(b2.start);
    let mut da = ops::dense_backward(&tape.a, &p[w2.clone()], g, d, SYMBOLS, &mut rest[w2], db2);
    ops::relu_backward(&tape.z, &mut da);
    let (rest, db1) = grad[..b1.end].split_at_mut(b1.start);
    ops::dense_backward(&tape.x, &p[w1.clone()], &da, d, d, &mut rest[w1], db1)
}

/// Everything about one level of one training cloud that does not depend on
/// the parameters.
#[derive(Debug, Clone)]
pub struct LevelData {
    pub level: u32,
    pub network: usize,
    pub parity: Vec<u8>,
    pub nbrs: Neighbors,
    pub q1: Vec<u8>,
    pub q2: Vec<u8>,
    /// Parent index of every voxel of the next level, or `None` at the last
    /// coded level.
    pub child_parent: Option<Vec<u32>>,
}

impl LevelData {
    pub fn len(&self) -> usize {
        self.parity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parity.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct LevelTape<T> {
    oct: Vec<T>,
    prop: Option<Vec<T>>,
    refine: [Vec<BlockTape<T>>; STACKS],
    heads: [HeadTape<T>; 2],
    dlogits: [Vec<T>; 2],
    /// Code length of both stages in bits.
    pub loss: f64,
}

impl<T: Real> LevelTape<T> {
    /// Sign of every ReLU input seen in this pass, in a fixed order. Two
    /// passes with equal patterns lie on the same linear piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let blocks = self.refine.iter().flatten().flat_map(|b| b.h.iter());
        let heads = self.heads.iter().flat_map(|h| h.z.iter());
        blocks.chain(heads).map(|&v| v > T::zero()).collect()
    }
}

/// Teacher-forced forward pass of one level. Returns the tape and, unless
/// this is the last level, the features replicated onto the next level.
pub fn level_forward<T: Real>(
    p: &[T],
    layout: Layout,
    data: &LevelData,
    prop: Option<Vec<T>>,
) -> (LevelTape<T>, Option<Vec<T>>) {
    let d = layout.dim;
    let oct = ops::embed(&p[layout.octant()], &data.parity, d);
    let f = match &prop {
        Some(pr) => ops::gated_fuse(&oct, pr, &p[layout.gate()], d),
        None => oct.clone(),
    };
    let mut r0 = Vec::new();
    let f = refine(p, layout, 0, f, &data.nbrs, Some(&mut r0));
    let (l1, h1) = head_logits(p, layout, 0, &f);
    let (bits1, g1) = ops::bits_loss(&l1, &data.q1, SYMBOLS);
    let mut f = f;
    ops::add_context(&mut f, &p[layout.context(0)], &data.q1, d);
    let mut r1 = Vec::new();
    let f = refine(p, layout, 1, f, &data.nbrs, Some(&mut r1));
    let (l2, h2) = head_logits(p, layout, 1, &f);
    let (bits2, g2) = ops::bits_loss(&l2, &data.q2, SYMBOLS);
    let mut f = f;
    ops::add_context(&mut f, &p[layout.context(1)], &data.q2, d);
    let mut r2 = Vec::new();
    let next = data.child_parent.as_ref().map(|cp| {
        let f = refine(p, layout, 2, f, &data.nbrs, Some(&mut r2));
        ops::gather_rows(&f, cp, d)
    });
    let tape = LevelTape {
        oct,
        prop,
        refine: [r0, r1, r2],
        heads: [h1, h2],
        dlogits: [g1, g2],
        loss: bits1 + bits2,
    };
    (tape, next)
}

/// Accumulates parameter gradients of `scale * loss + <dnext, next>` and
/// returns the gradient with respect to the propagated input features.
pub fn level_backward<T: Real>(
    p: &[T],
    grad: &mut [T],
    layout: Layout,
    data: &LevelData,
    tape: &LevelTape<T>,
    dnext: Option<Vec<T>>,
    scale: T,
) -> Option<Vec<T>> {
    let d = layout.dim;
    let n = data.len();
    let mut g = match (dnext, &data.child_parent) {
        (Some(dn), Some(cp)) => {
            let gf = ops::scatter_rows(&dn, cp, n, d);
            refine_backward(p, grad, layout, 2, &tape.refine[2], gf, &data.nbrs)
        }
        _ => vec![T::zero(); n * d],
    };
    ops::embed_backward(&mut grad[layout.context(1)], &data.q2, &g, d);
    let dl: Vec<T> = tape.dlogits[1].iter().map(|&v| v * scale).collect();
    let dh = head_backward(p, grad, layout, 1, &tape.heads[1], &dl);
    for (a, b) in g.iter_mut().zip(dh) {
        *a += b;
    }
    let mut g = refine_backward(p, grad, layout, 1, &tape.refine[1], g, &data.nbrs);
    ops::embed_backward(&mut grad[layout.context(0)], &data.q1, &g, d);
    let dl: Vec<T> = tape.dlogits[0].iter().map(|&v| v * scale).collect();
    let dh = head_backward(p, grad, layout, 0, &tape.heads[0], &dl);
    for (a, b) in g.iter_mut().zip(dh) {
        *a += b;
    }
    let g = refine_backward(p, grad, layout, 0, &tape.refine[0], g, &data.nbrs);
    match &tape.prop {
        Some(pr) => {
            let (doct, dprop) =
                ops::gated_fuse_backward(&tape.oct, pr, &p[layout.gate()], &g, d, &mut grad[layout.gate()]);
            ops::embed_backward(&mut grad[layout.octant()], &data.parity, &doct, d);
            Some(dprop)
        }
        None => {
            ops::embed_backward(&mut grad[layout.octant()], &data.parity, &g, d);
            None
        }
    }
}
