//! Layer primitives with hand-written backward passes. Matrices are dense
//! row-major; linear weights are stored `[in, out]`.

use crate::scalar::{gemm, Mat, MatMut, Scalar};

pub const LN_EPS: f64 = 1e-6;

/// `y = x w + b` for `x: [n, d_in]`.
pub fn linear<T: Scalar>(x: &[T], n: usize, w: &[T], b: &[T], d_in: usize, d_out: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(n * d_out);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    gemm(
        T::one(),
        Mat::new(x, n, d_in),
        Mat::new(w, d_in, d_out),
        T::one(),
        MatMut::new(&mut y, n, d_out),
    );
    y
}

/// Accumulates `dw += xᵀ dy`, `db += Σ dy` and returns `dy wᵀ`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    n: usize,
    w: &[T],
    d_in: usize,
    d_out: usize,
    dw: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    gemm(
        T::one(),
        Mat::new(x, n, d_in).t(),
        Mat::new(dy, n, d_out),
        T::one(),
        MatMut::new(dw, d_in, d_out),
    );
    for row in dy.chunks_exact(d_out) {
        for (g, &v) in db.iter_mut().zip(row) {
            *g = *g + v;
        }
    }
    let mut dx = vec![T::zero(); n * d_in];
    gemm(
        T::one(),
        Mat::new(dy, n, d_out),
        Mat::new(w, d_in, d_out).t(),
        T::zero(),
        MatMut::new(&mut dx, n, d_in),
    );
    dx
}

pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
    pub y: Vec<T>,
}

pub fn layer_norm<T: Scalar>(x: &[T], d: usize, gain: &[T], bias: &[T]) -> NormCache<T> {
    let n = x.len() / d;
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    let mut rstd = Vec::with_capacity(n);
    let inv_d = T::one() / T::of(d as f64);
    for row in x.chunks_exact(d) {
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_d;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_d;
        let r = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd.push(r);
        for (j, &v) in row.iter().enumerate() {
            let h = (v - mean) * r;
            xhat.push(h);
            y.push(h * gain[j] + bias[j]);
        }
    }
    NormCache { xhat, rstd, y }
}

/// Accumulates gain/bias gradients and returns the input gradient.
pub fn layer_norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    dy: &[T],
    d: usize,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let inv_d = T::one() / T::of(d as f64);
    let mut dx = Vec::with_capacity(dy.len());
    let mut dxhat = vec![T::zero(); d];
    for ((dy_row, xhat_row), &r) in dy.chunks_exact(d).zip(cache.xhat.chunks_exact(d)).zip(&cache.rstd) {
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            dgain[j] = dgain[j] + dy_row[j] * xhat_row[j];
            dbias[j] = dbias[j] + dy_row[j];
            dxhat[j] = dy_row[j] * gain[j];
            mean_dxhat = mean_dxhat + dxhat[j];
            mean_dxhat_xhat = mean_dxhat_xhat + dxhat[j] * xhat_row[j];
        }
        mean_dxhat = mean_dxhat * inv_d;
        mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
        for j in 0..d {
            dx.push(r * (dxhat[j] - mean_dxhat - xhat_row[j] * mean_dxhat_xhat));
        }
    }
    dx
}

pub fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Row-wise softmax over the first `valid[i]` entries of each row; the rest are 0.
pub fn softmax_prefix<T: Scalar>(scores: &mut [T], cols: usize, valid: impl Fn(usize) -> usize) {
    for (i, row) in scores.chunks_exact_mut(cols).enumerate() {
        let k = valid(i);
        let (live, masked) = row.split_at_mut(k);
        let max = live.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let mut sum = T::zero();
        for v in live.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in live.iter_mut() {
            *v = *v / sum;
        }
        masked.fill(T::zero());
    }
}

/// Multi-head scaled dot-product attention for queries `q: [n, d]` over
/// keys/values `[m, d]`. With `causal`, query `i` sees keys `0..=i`.
pub struct Attention<T> {
    /// `[heads, n, m]` attention probabilities.
    pub probs: Vec<T>,
    /// `[n, d]` concatenated head outputs.
    pub context: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
pub fn attend<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    n: usize,
    m: usize,
    d: usize,
    heads: usize,
    causal: bool,
) -> Attention<T> {
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut probs = vec![T::zero(); heads * n * m];
    let mut context = vec![T::zero(); n * d];
    for h in 0..heads {
        let p = &mut probs[h * n * m..(h + 1) * n * m];
        gemm(
            scale,
            Mat::cols_of(q, n, d, h * dh, dh),
            Mat::cols_of(k, m, d, h * dh, dh).t(),
            T::zero(),
            MatMut::new(p, n, m),
        );
        if causal {
            softmax_prefix(p, m, |i| (i + 1).min(m));
        } else {
            softmax_prefix(p, m, |_| m);
        }
        gemm(
            T::one(),
            Mat::new(p, n, m),
            Mat::cols_of(v, m, d, h * dh, dh),
            T::zero(),
            MatMut::cols_of(&mut context, n, d, h * dh, dh),
        );
    }
    Attention { probs, context }
}

/// Gradients of [`attend`] with respect to `q`, `k` and `v`.
#[allow(clippy::too_many_arguments)]
pub fn attend_backward<T: Scalar>(
    att: &Attention<T>,
    dcontext: &[T],
    q: &[T],
    k: &[T],
    v: &[T],
    n: usize,
    m: usize,
    d: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); m * d];
    let mut dv = vec![T::zero(); m * d];
    let mut ds = vec![T::zero(); n * m];
    for h in 0..heads {
        let p = &att.probs[h * n * m..(h + 1) * n * m];
        let dctx = Mat::cols_of(dcontext, n, d, h * dh, dh);
        // dV_h = Pᵀ dC_h
        gemm(
            T::one(),
            Mat::new(p, n, m).t(),
            dctx,
            T::zero(),
            MatMut::cols_of(&mut dv, m, d, h * dh, dh),
        );
        // dP = dC_h V_hᵀ, then dS = P ⊙ (dP − rowsum(dP ⊙ P))
        gemm(
            T::one(),
            dctx,
            Mat::cols_of(v, m, d, h * dh, dh).t(),
            T::zero(),
            MatMut::new(&mut ds, n, m),
        );
        for (ds_row, p_row) in ds.chunks_exact_mut(m).zip(p.chunks_exact(m)) {
            let dot = ds_row.iter().zip(p_row).fold(T::zero(), |a, (&g, &pp)| a + g * pp);
            for (g, &pp) in ds_row.iter_mut().zip(p_row) {
                *g = pp * (*g - dot);
            }
        }
        gemm(
            scale,
            Mat::new(&ds, n, m),
            Mat::cols_of(k, m, d, h * dh, dh),
            T::zero(),
            MatMut::cols_of(&mut dq, n, d, h * dh, dh),
        );
        gemm(
            scale,
            Mat::new(&ds, n, m).t(),
            Mat::cols_of(q, n, d, h * dh, dh),
            T::zero(),
            MatMut::cols_of(&mut dk, m, d, h * dh, dh),
        );
    }
    (dq, dk, dv)
}

/// Sinusoidal position encoding of one position.
pub fn position_row<T: Scalar>(pos: usize, d: usize, out: &mut [T]) {
    for (i, x) in out[..d].iter_mut().enumerate() {
        let exponent = (2 * (i / 2)) as f64 / d as f64;
        let angle = pos as f64 / 10000f64.powf(exponent);
        *x = T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() });
    }
}

pub fn add_in_place<T: Scalar>(a: &mut [T], b: &[T]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x = *x + y;
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
