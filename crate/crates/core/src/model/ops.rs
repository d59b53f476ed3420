//! Forward and backward passes of the coding network's building blocks.
//!
//! Everything works on flat row-major slices and is generic over the float
//! type: coding and training run in `f32`, gradient checks in `f64`. Each
//! function fixes its accumulation order so results are bit-reproducible.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rustc_hash::FxHashMap;

use crate::morton::{interleave, Coord};

pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Default + Send + Sync + Debug + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}

/// Kernel taps of a 3x3x3 convolution.
pub const KERNEL: usize = 27;
/// Tap index of offset (0, 0, 0).
pub const CENTER: usize = 13;
const ABSENT: u32 = u32::MAX;

/// Offset of tap `o`: `o = 9(dx+1) + 3(dy+1) + (dz+1)`.
pub fn kernel_offset(o: usize) -> [i64; 3] {
    [(o / 9) as i64 - 1, ((o / 3) % 3) as i64 - 1, (o % 3) as i64 - 1]
}

/// For every voxel, the index of the occupied voxel at each kernel tap.
#[derive(Debug, Clone)]
pub struct Neighbors {
    idx: Vec<u32>,
}

impl Neighbors {
    /// Exact coordinate lookup through a hash of Morton codes.
    pub fn build(coords: &[Coord], level: u32) -> Self {
        let map: FxHashMap<u64, u32> = coords
            .iter()
            .enumerate()
            .map(|(i, &c)| (interleave(c), i as u32))
            .collect();
        let limit = 1i64 << level;
        let offsets: Vec<[i64; 3]> = (0..KERNEL).map(kernel_offset).collect();
        let mut idx = Vec::with_capacity(coords.len() * KERNEL);
        for (i, &c) in coords.iter().enumerate() {
            for (o, d) in offsets.iter().enumerate() {
                if o == CENTER {
                    idx.push(i as u32);
                    continue;
                }
                let p = [c[0] as i64 + d[0], c[1] as i64 + d[1], c[2] as i64 + d[2]];
                if p.iter().any(|&v| v < 0 || v >= limit) {
                    idx.push(ABSENT);
                    continue;
                }
                let code = interleave([p[0] as u32, p[1] as u32, p[2] as u32]);
                idx.push(map.get(&code).copied().unwrap_or(ABSENT));
            }
        }
        Neighbors { idx }
    }

    pub fn len(&self) -> usize {
        self.idx.len() / KERNEL
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    #[inline]
    pub fn get(&self, n: usize, o: usize) -> Option<usize> {
        let m = self.idx[n * KERNEL + o];
        (m != ABSENT).then_some(m as usize)
    }

    #[inline]
    fn row(&self, n: usize) -> &[u32] {
        &self.idx[n * KERNEL..(n + 1) * KERNEL]
    }
}

/// `out[n] = table[index[n]]`.
pub fn embed<T: Real>(table: &[T], index: &[u8], d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(index.len() * d);
    for &i in index {
        out.extend_from_slice(&table[i as usize * d..(i as usize + 1) * d]);
    }
    out
}

pub fn embed_backward<T: Real>(dtable: &mut [T], index: &[u8], dout: &[T], d: usize) {
    for (n, &i) in index.iter().enumerate() {
        let dst = &mut dtable[i as usize * d..(i as usize + 1) * d];
        for (a, &g) in dst.iter_mut().zip(&dout[n * d..(n + 1) * d]) {
            *a += g;
        }
    }
}

/// `x[n] += table[symbols[n]]` in place.
pub fn add_context<T: Real>(x: &mut [T], table: &[T], symbols: &[u8], d: usize) {
    for (n, &s) in symbols.iter().enumerate() {
        let row = &table[s as usize * d..(s as usize + 1) * d];
        for (a, &e) in x[n * d..(n + 1) * d].iter_mut().zip(row) {
            *a += e;
        }
    }
}

/// Per-channel softmax over the two gate rows: `(w_oct, w_prop)`.
pub fn gate_weights<T: Real>(gate: &[T], d: usize) -> (Vec<T>, Vec<T>) {
    let mut wc = Vec::with_capacity(d);
    let mut wp = Vec::with_capacity(d);
    for c in 0..d {
        let (g0, g1) = (gate[c], gate[d + c]);
        let m = g0.max(g1);
        let e0 = (g0 - m).exp();
        let e1 = (g1 - m).exp();
        let s = e0 + e1;
        wc.push(e0 / s);
        wp.push(e1 / s);
    }
    (wc, wp)
}

/// Channel-wise gated fusion `w_oct * oct + w_prop * prop`.
pub fn gated_fuse<T: Real>(oct: &[T], prop: &[T], gate: &[T], d: usize) -> Vec<T> {
    let (wc, wp) = gate_weights(gate, d);
    let mut out = Vec::with_capacity(oct.len());
    for (a, b) in oct.chunks_exact(d).zip(prop.chunks_exact(d)) {
        for c in 0..d {
            out.push(wc[c] * a[c] + wp[c] * b[c]);
        }
    }
    out
}

/// Returns `(d_oct, d_prop)` and accumulates into `dgate`.
pub fn gated_fuse_backward<T: Real>(
    oct: &[T],
    prop: &[T],
    gate: &[T],
    dout: &[T],
    d: usize,
    dgate: &mut [T],
) -> (Vec<T>, Vec<T>) {
    let (wc, wp) = gate_weights(gate, d);
    let mut doct = Vec::with_capacity(oct.len());
    let mut dprop = Vec::with_capacity(prop.len());
    let mut dwc = vec![T::zero(); d];
    let mut dwp = vec![T::zero(); d];
    for ((a, b), g) in oct
        .chunks_exact(d)
        .zip(prop.chunks_exact(d))
        .zip(dout.chunks_exact(d))
    {
        for c in 0..d {
            doct.push(wc[c] * g[c]);
            dprop.push(wp[c] * g[c]);
            dwc[c] += g[c] * a[c];
            dwp[c] += g[c] * b[c];
        }
    }
    for c in 0..d {
        let dz = wc[c] * wp[c] * (dwc[c] - dwp[c]);
        dgate[c] += dz;
        dgate[d + c] -= dz;
    }
    (doct, dprop)
}

/// Submanifold 3x3x3 sparse convolution. `w` is laid out `[tap][in][out]`.
/// Absent neighbors contribute nothing; taps are summed in index order.
pub fn sparse_conv<T: Real>(x: &[T], nbrs: &Neighbors, w: &[T], b: &[T], d: usize) -> Vec<T> {
    let n = nbrs.len();
    let mut out = Vec::with_capacity(n * d);
    let mut acc = vec![T::zero(); d];
    for i in 0..n {
        acc.copy_from_slice(b);
        for (o, &m) in nbrs.row(i).iter().enumerate() {
            if m == ABSENT {
                continue;
            }
            let xr = &x[m as usize * d..(m as usize + 1) * d];
            let wo = &w[o * d * d..(o + 1) * d * d];
            for (k, &xv) in xr.iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                let wr = &wo[k * d..(k + 1) * d];
                for (a, &wv) in acc.iter_mut().zip(wr) {
                    *a += xv * wv;
                }
            }
        }
        out.extend_from_slice(&acc);
    }
    out
}

/// Accumulates input, weight and bias gradients of [`sparse_conv`].
#[allow(clippy::too_many_arguments)]
pub fn sparse_conv_backward<T: Real>(
    x: &[T],
    nbrs: &Neighbors,
    w: &[T],
    dout: &[T],
    d: usize,
    dx: &mut [T],
    dw: &mut [T],
    db: &mut [T],
) {
    let n = nbrs.len();
    // transposed taps turn the input gradient into row updates
    let mut wt = vec![T::zero(); w.len()];
    for o in 0..KERNEL {
        for k in 0..d {
            for j in 0..d {
                wt[o * d * d + j * d + k] = w[o * d * d + k * d + j];
            }
        }
    }
    for i in 0..n {
        let g = &dout[i * d..(i + 1) * d];
        for (a, &gv) in db.iter_mut().zip(g) {
            *a += gv;
        }
        for (o, &m) in nbrs.row(i).iter().enumerate() {
            if m == ABSENT {
                continue;
            }
            let m = m as usize;
            let wto = &wt[o * d * d..(o + 1) * d * d];
            let dxm = &mut dx[m * d..(m + 1) * d];
            for (j, &gv) in g.iter().enumerate() {
                if gv == T::zero() {
                    continue;
                }
                for (a, &wv) in dxm.iter_mut().zip(&wto[j * d..(j + 1) * d]) {
                    *a += gv * wv;
                }
            }
            let xm = &x[m * d..(m + 1) * d];
            let dwo = &mut dw[o * d * d..(o + 1) * d * d];
            for (k, &xv) in xm.iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                for (a, &gv) in dwo[k * d..(k + 1) * d].iter_mut().zip(g) {
                    *a += xv * gv;
                }
            }
        }
    }
}

pub fn relu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

/// Masks `g` in place where the pre-activation was not positive.
pub fn relu_backward<T: Real>(pre: &[T], g: &mut [T]) {
    for (gv, &p) in g.iter_mut().zip(pre) {
        if p <= T::zero() {
            *gv = T::zero();
        }
    }
}

/// `y = x W + b` with `W` laid out `[in][out]`.
pub fn dense<T: Real>(x: &[T], w: &[T], b: &[T], din: usize, dout: usize) -> Vec<T> {
    let n = x.len() / din;
    let mut out = Vec::with_capacity(n * dout);
    let mut acc = vec![T::zero(); dout];
    for xr in x.chunks_exact(din) {
        acc.copy_from_slice(b);
        for (k, &xv) in xr.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (a, &wv) in acc.iter_mut().zip(&w[k * dout..(k + 1) * dout]) {
                *a += xv * wv;
            }
        }
        out.extend_from_slice(&acc);
    }
    out
}

/// Returns `dx`; accumulates `dw` and `db`.
pub fn dense_backward<T: Real>(
    x: &[T],
    w: &[T],
    g: &[T],
    din: usize,
    dout: usize,
    dw: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    let mut dx = Vec::with_capacity(x.len());
    for (xr, gr) in x.chunks_exact(din).zip(g.chunks_exact(dout)) {
        for (a, &gv) in db.iter_mut().zip(gr) {
            *a += gv;
        }
        for (k, &xv) in xr.iter().enumerate() {
            let wr = &w[k * dout..(k + 1) * dout];
            let mut s = T::zero();
            for (&wv, &gv) in wr.iter().zip(gr) {
                s += wv * gv;
            }
            dx.push(s);
            if xv != T::zero() {
                for (a, &gv) in dw[k * dout..(k + 1) * dout].iter_mut().zip(gr) {
                    *a += xv * gv;
                }
            }
        }
    }
    dx
}

/// Row-wise softmax.
pub fn softmax<T: Real>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let start = out.len();
        let mut s = T::zero();
        for &z in row {
            let e = (z - m).exp();
            s += e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p = *p / s;
        }
    }
    out
}

/// Total code length `sum_n -log2 p[n][target[n]]` and its gradient with
/// respect to the logits.
pub fn bits_loss<T: Real>(logits: &[T], targets: &[u8], k: usize) -> (f64, Vec<T>) {
    let ln2 = std::f64::consts::LN_2;
    let inv_ln2 = T::of(1.0 / ln2);
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &t) in logits.chunks_exact(k).zip(targets) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for &z in row {
            s += (z - m).exp();
        }
        let lse = m + s.ln();
        loss += (lse - row[t as usize]).f64() / ln2;
        for (j, &z) in row.iter().enumerate() {
            let p = (z - lse).exp();
            let y = if j == t as usize { T::one() } else { T::zero() };
            grad.push((p - y) * inv_ln2);
        }
    }
    (loss, grad)
}

/// `out[c] = x[parent[c]]`.
pub fn gather_rows<T: Real>(x: &[T], parent: &[u32], d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(parent.len() * d);
    for &p in parent {
        out.extend_from_slice(&x[p as usize * d..(p as usize + 1) * d]);
    }
    out
}

/// Transpose of [`gather_rows`]: sums child rows into their parents.
pub fn scatter_rows<T: Real>(g: &[T], parent: &[u32], parents: usize, d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); parents * d];
    for (c, &p) in parent.iter().enumerate() {
        for (a, &v) in out[p as usize * d..(p as usize + 1) * d]
            .iter_mut()
            .zip(&g[c * d..(c + 1) * d])
        {
            *a += v;
        }
    }
    out
}
