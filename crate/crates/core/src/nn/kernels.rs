//! Forward/backward kernels shared by the graph ops and the cached decoder.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{dot, gemm, MatMut, MatRef, Real};

pub const RMS_EPS: f64 = 1e-6;
pub const ROPE_BASE: f64 = 10_000.0;

/// `y = x / sqrt(mean(x²) + eps) * w` per row; stores the inverse RMS.
pub fn rmsnorm_forward<T: Real>(x: &[T], w: &[T], d: usize, out: &mut [T], inv_rms: &mut [T]) {
    let eps = T::lit(RMS_EPS);
    let dn = T::lit(d as f64);
    for (r, (xr, yr)) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).enumerate() {
        let ms = xr.iter().map(|&a| a * a).sum::<T>() / dn;
        let inv = T::one() / (ms + eps).sqrt();
        inv_rms[r] = inv;
        for ((y, &a), &g) in yr.iter_mut().zip(xr).zip(w) {
            *y = a * inv * g;
        }
    }
}

pub fn rmsnorm_backward<T: Real>(
    x: &[T],
    w: &[T],
    inv_rms: &[T],
    dy: &[T],
    d: usize,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let dn = T::lit(d as f64);
    for (r, (xr, gr)) in x.chunks_exact(d).zip(dy.chunks_exact(d)).enumerate() {
        let inv = inv_rms[r];
        if let Some(dw) = dw.as_deref_mut() {
            for ((acc, &g), &a) in dw.iter_mut().zip(gr).zip(xr) {
                *acc += g * a * inv;
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dot: T = gr.iter().zip(w).zip(xr).map(|((&g, &wi), &a)| g * wi * a).sum();
            let k = inv * inv * inv * dot / dn;
            for (i, acc) in dx[r * d..(r + 1) * d].iter_mut().enumerate() {
                *acc += inv * gr[i] * w[i] - k * xr[i];
            }
        }
    }
}

/// Cosine/sine of `p·θᵢ`, `θᵢ = base^(−2i/d_h)`, for each listed position.
#[derive(Debug, Clone)]
pub struct RopeTable<T> {
    half: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Real> RopeTable<T> {
    pub fn new(positions: &[usize], head_dim: usize) -> Self {
        assert!(head_dim.is_multiple_of(2), "rotary head dimension must be even");
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(positions.len() * half);
        let mut sin = Vec::with_capacity(positions.len() * half);
        for &p in positions {
            for i in 0..half {
                let theta = libm::pow(ROPE_BASE, -2.0 * i as f64 / head_dim as f64);
                let a = p as f64 * theta;
                cos.push(T::lit(libm::cos(a)));
                sin.push(T::lit(libm::sin(a)));
            }
        }
        Self { half, cos, sin }
    }

    /// Rotates consecutive pairs of every head in place; `inverse` applies
    /// the transpose rotation (used by the backward pass).
    pub fn rotate(&self, x: &mut [T], heads: usize, inverse: bool) {
        let dh = self.half * 2;
        let width = heads * dh;
        for (r, row) in x.chunks_exact_mut(width).enumerate() {
            let cs = &self.cos[r * self.half..(r + 1) * self.half];
            let sn = &self.sin[r * self.half..(r + 1) * self.half];
            for head in row.chunks_exact_mut(dh) {
                for i in 0..self.half {
                    let (a, b) = (head[2 * i], head[2 * i + 1]);
                    let (c, s) = (cs[i], if inverse { -sn[i] } else { sn[i] });
                    head[2 * i] = a * c - b * s;
                    head[2 * i + 1] = a * s + b * c;
                }
            }
        }
    }
}

pub fn softmax_inplace<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| if x > m { x } else { m });
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = if *x == T::neg_infinity() { T::zero() } else { (*x - max).exp() };
        sum += *x;
    }
    let inv = T::one() / sum;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

/// Multi-head scaled dot-product attention over rotated `q`/`k`.
///
/// `q` is `nq × (heads·dh)`, `k`/`v` are `nk × (heads·dh)`. With
/// `causal_offset = Some(o)`, query row `i` sees keys `j ≤ i + o`. The
/// softmax weights are written to `probs` (`heads × nq × nk`).
#[allow(clippy::too_many_arguments)]
pub fn attention_forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    nq: usize,
    nk: usize,
    heads: usize,
    dh: usize,
    scale: T,
    causal_offset: Option<usize>,
    out: &mut [T],
    probs: &mut [T],
) {
    let width = heads * dh;
    if nq == 1 {
        // Single-query decoding step: direct loops avoid packing K and V.
        for h in 0..heads {
            let qh = &q[h * dh..(h + 1) * dh];
            let p = &mut probs[h * nk..(h + 1) * nk];
            for (j, x) in p.iter_mut().enumerate() {
                *x = if causal_offset.is_some_and(|o| j > o) {
                    T::neg_infinity()
                } else {
                    scale * dot(qh, &k[j * width + h * dh..j * width + (h + 1) * dh])
                };
            }
            softmax_inplace(p);
            let o = &mut out[h * dh..(h + 1) * dh];
            o.iter_mut().for_each(|x| *x = T::zero());
            for (j, &w) in p.iter().enumerate() {
                let vj = &v[j * width + h * dh..j * width + (h + 1) * dh];
                for (x, &y) in o.iter_mut().zip(vj) {
                    *x += w * y;
                }
            }
        }
        return;
    }
    for h in 0..heads {
        let p = &mut probs[h * nq * nk..(h + 1) * nq * nk];
        gemm(
            scale,
            MatRef::cols_of(q, nq, width, h * dh, dh),
            MatRef::cols_of(k, nk, width, h * dh, dh).t(),
            T::zero(),
            MatMut::new(p, nq, nk),
        );
        for (i, row) in p.chunks_exact_mut(nk).enumerate() {
            if let Some(o) = causal_offset {
                for x in row.iter_mut().skip(i + o + 1) {
                    *x = T::neg_infinity();
                }
            }
            softmax_inplace(row);
        }
        gemm(
            T::one(),
            MatRef::new(p, nq, nk),
            MatRef::cols_of(v, nk, width, h * dh, dh),
            T::zero(),
            MatMut::cols_of(out, nq, width, h * dh, dh),
        );
    }
}

/// Accumulates `dq`, `dk`, `dv` for [`attention_forward`].
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    nq: usize,
    nk: usize,
    heads: usize,
    dh: usize,
    scale: T,
    probs: &[T],
    dout: &[T],
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let width = heads * dh;
    let mut ds = vec![T::zero(); nq * nk];
    for h in 0..heads {
        let p = &probs[h * nq * nk..(h + 1) * nq * nk];
        let dout_h = MatRef::cols_of(dout, nq, width, h * dh, dh);
        gemm(T::one(), MatRef::new(p, nq, nk).t(), dout_h, T::one(), MatMut::cols_of(dv, nk, width, h * dh, dh));
        gemm(T::one(), dout_h, MatRef::cols_of(v, nk, width, h * dh, dh).t(), T::zero(), MatMut::new(&mut ds, nq, nk));
        for (prow, drow) in p.chunks_exact(nk).zip(ds.chunks_exact_mut(nk)) {
            let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
            for (d, &pi) in drow.iter_mut().zip(prow) {
                *d = pi * (*d - dot);
            }
        }
        gemm(
            scale,
            MatRef::new(&ds, nq, nk),
            MatRef::cols_of(k, nk, width, h * dh, dh),
            T::one(),
            MatMut::cols_of(dq, nq, width, h * dh, dh),
        );
        gemm(
            scale,
            MatRef::new(&ds, nq, nk).t(),
            MatRef::cols_of(q, nq, width, h * dh, dh),
            T::one(),
            MatMut::cols_of(dk, nk, width, h * dh, dh),
        );
    }
}

/// Row-wise log-softmax.
pub fn log_softmax_row<T: Real>(row: &[T]) -> Vec<T> {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| if x > m { x } else { m });
    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
    row.iter().map(|&x| x - lse).collect()
}
