//! Forward and backward kernels on packed `T x H` matrices.
//!
//! A packed matrix stacks the rows of several sequences; `segments` holds the
//! half-open row range of each sequence. Attention never crosses a segment
//! boundary.

use std::ops::Range;

use ndarray::{s, linalg::general_mat_mul, Array1, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `x W + b`.
pub(crate) fn linear(x: &ArrayView2<f64>, w: &ArrayView2<f64>, b: Option<&ArrayView2<f64>>) -> Array2<f64> {
    let mut y = x.dot(w);
    if let Some(b) = b {
        y += &b.row(0);
    }
    y
}

/// Accumulates `dW += x^T dy` and returns `dy W^T`.
pub(crate) fn linear_backward(
    x: &ArrayView2<f64>,
    w: &ArrayView2<f64>,
    dy: &ArrayView2<f64>,
    dw: &mut ArrayViewMut2<f64>,
) -> Array2<f64> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, dw);
    dy.dot(&w.t())
}

/// Accumulates `db += colsum(dy)`.
pub(crate) fn bias_backward(dy: &ArrayView2<f64>, db: &mut ArrayViewMut2<f64>) {
    let mut row = db.row_mut(0);
    row += &dy.sum_axis(Axis(0));
}

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub(crate) fn layer_norm(
    x: &ArrayView2<f64>,
    gamma: &ArrayView2<f64>,
    beta: &ArrayView2<f64>,
) -> (Array2<f64>, LnCache) {
    let h = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / h;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / h;
        *is = 1.0 / (var + LN_EPS).sqrt();
        row *= *is;
    }
    let y = &xhat * &gamma.row(0) + &beta.row(0);
    (y, LnCache { xhat, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_backward(
    dy: &ArrayView2<f64>,
    cache: &LnCache,
    gamma: &ArrayView2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let h = dy.ncols() as f64;
    let mut dx = dy * &gamma.row(0);
    for ((mut row, xh), &is) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_d = row.sum() / h;
        let mean_dx = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / h;
        Zip::from(&mut row).and(&xh).for_each(|d, &x| {
            *d = is * (*d - mean_d - x * mean_dx);
        });
    }
    (dx, dgamma, dbeta)
}

/// Tanh approximation of GELU.
pub(crate) fn gelu(u: &Array2<f64>) -> Array2<f64> {
    u.mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
}

pub(crate) fn gelu_backward(u: &Array2<f64>, dh: &Array2<f64>) -> Array2<f64> {
    let mut du = dh.clone();
    Zip::from(&mut du).and(u).for_each(|d, &x| {
        let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
        *d *= 0.5 * (1.0 + t) + 0.5 * x * dt;
    });
    du
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Multi-head scaled dot-product attention within segments. Returns the
/// concatenated head outputs and the attention probabilities, indexed
/// `segment * heads + head`.
pub(crate) fn attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    segments: &[Range<usize>],
    heads: usize,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let dh = q.ncols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity(segments.len() * heads);
    for seg in segments {
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let qs = q.slice(s![seg.clone(), cols.clone()]);
            let ks = k.slice(s![seg.clone(), cols.clone()]);
            let vs = v.slice(s![seg.clone(), cols.clone()]);
            let mut p = qs.dot(&ks.t());
            p *= scale;
            softmax_rows(&mut p);
            ctx.slice_mut(s![seg.clone(), cols]).assign(&p.dot(&vs));
            probs.push(p);
        }
    }
    (ctx, probs)
}

/// Gradients of [`attention`] with respect to `q`, `k` and `v`.
pub(crate) fn attention_backward(
    dctx: &Array2<f64>,
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    probs: &[Array2<f64>],
    segments: &[Range<usize>],
    heads: usize,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let dh = q.ncols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    for (si, seg) in segments.iter().enumerate() {
        for h in 0..heads {
            let p = &probs[si * heads + h];
            let cols = h * dh..(h + 1) * dh;
            let qs = q.slice(s![seg.clone(), cols.clone()]);
            let ks = k.slice(s![seg.clone(), cols.clone()]);
            let vs = v.slice(s![seg.clone(), cols.clone()]);
            let dout = dctx.slice(s![seg.clone(), cols.clone()]);
            dv.slice_mut(s![seg.clone(), cols.clone()]).assign(&p.t().dot(&dout));
            let dp = dout.dot(&vs.t());
            let mut ds = &dp * p;
            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let total = row.sum();
                Zip::from(&mut row).and(&prow).for_each(|d, &pp| *d -= pp * total);
            }
            ds *= scale;
            dq.slice_mut(s![seg.clone(), cols.clone()]).assign(&ds.dot(&ks));
            dk.slice_mut(s![seg.clone(), cols]).assign(&ds.t().dot(&qs));
        }
    }
    (dq, dk, dv)
}
