//! Layer primitives with exact forward/backward passes.
//!
//! Everything is a direct loop: determinism matters here, kernel speed does
//! not. Inner products and reductions accumulate in `f64` and are stored
//! back as `f32`, which keeps finite-difference checks and cross-run
//! comparisons tight.
//!
//! Batch-norm tensors are interpreted as `[outer, channels, inner]`:
//! `[N, C]` activations have `inner = 1`, `[N, C, H, W]` feature maps have
//! `inner = H·W`, and statistics reduce over `outer × inner` per channel.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn shape_err(site: &str, expected: &[usize], actual: &[usize]) -> Error {
    Error::ShapeMismatch {
        site: site.into(),
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}

// ── Dense ──────────────────────────────────────────────────────────

/// `y[n,o] = b[o] + Σ_i w[o,i]·x[n,i]` for `x: [N, I]`, `w: [O, I]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor, site: &str) -> Result<Tensor> {
    let (n, i) = match x.shape() {
        [n, i] => (*n, *i),
        other => return Err(shape_err(site, &[0, 0], other)),
    };
    let (o, wi) = (w.shape()[0], w.shape()[1]);
    if wi != i || b.shape() != [o] {
        return Err(shape_err(site, &[o, i], w.shape()));
    }
    let mut y = vec![0.0f32; n * o];
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    for ni in 0..n {
        for oi in 0..o {
            let mut acc = bd[oi] as f64;
            let xrow = &xd[ni * i..(ni + 1) * i];
            let wrow = &wd[oi * i..(oi + 1) * i];
            for k in 0..i {
                acc += xrow[k] as f64 * wrow[k] as f64;
            }
            y[ni * o + oi] = acc as f32;
        }
    }
    Tensor::from_vec(&[n, o], y)
}

/// Returns `(dx, dw, db)`.
pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, i) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    debug_assert_eq!(dy.shape(), &[n, o]);
    let xd = x.data();
    let wd = w.data();
    let dyd = dy.data();

    let mut dw = vec![0.0f64; o * i];
    let mut db = vec![0.0f64; o];
    let mut dx = vec![0.0f64; n * i];
    for ni in 0..n {
        for oi in 0..o {
            let g = dyd[ni * o + oi] as f64;
            db[oi] += g;
            for k in 0..i {
                dw[oi * i + k] += g * xd[ni * i + k] as f64;
                dx[ni * i + k] += g * wd[oi * i + k] as f64;
            }
        }
    }
    (
        Tensor::from_vec(&[n, i], dx.iter().map(|&v| v as f32).collect()).unwrap(),
        Tensor::from_vec(&[o, i], dw.iter().map(|&v| v as f32).collect()).unwrap(),
        Tensor::from_vec(&[o], db.iter().map(|&v| v as f32).collect()).unwrap(),
    )
}

// ── 2-D convolution (stride 1, same padding, odd kernel) ──────────

/// `x: [N, IC, H, W]`, `w: [OC, IC, K, K]` with odd `K`; output keeps H×W.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, site: &str) -> Result<Tensor> {
    let (n, ic, h, wd_) = match x.shape() {
        [n, c, h, w] => (*n, *c, *h, *w),
        other => return Err(shape_err(site, &[0, 0, 0, 0], other)),
    };
    let (oc, wic, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if wic != ic || w.shape()[3] != k || k % 2 == 0 || b.shape() != [oc] {
        return Err(shape_err(site, &[oc, ic, k, k], w.shape()));
    }
    let pad = k / 2;
    let xd = x.data();
    let wv = w.data();
    let bd = b.data();
    let mut y = vec![0.0f32; n * oc * h * wd_];
    for ni in 0..n {
        for o in 0..oc {
            for oh in 0..h {
                for ow in 0..wd_ {
                    let mut acc = bd[o] as f64;
                    for c in 0..ic {
                        for kh in 0..k {
                            let ihs = oh + kh;
                            if ihs < pad || ihs - pad >= h {
                                continue;
                            }
                            let ih = ihs - pad;
                            for kw in 0..k {
                                let iws = ow + kw;
                                if iws < pad || iws - pad >= wd_ {
                                    continue;
                                }
                                let iw = iws - pad;
                                acc += xd[((ni * ic + c) * h + ih) * wd_ + iw] as f64
                                    * wv[((o * ic + c) * k + kh) * k + kw] as f64;
                            }
                        }
                    }
                    y[((ni * oc + o) * h + oh) * wd_ + ow] = acc as f32;
                }
            }
        }
    }
    Tensor::from_vec(&[n, oc, h, wd_], y)
}

/// Returns `(dx, dw, db)`.
pub fn conv2d_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, ic, h, wd_) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oc, k) = (w.shape()[0], w.shape()[2]);
    debug_assert_eq!(dy.shape(), &[n, oc, h, wd_]);
    let pad = k / 2;
    let xd = x.data();
    let wv = w.data();
    let dyd = dy.data();

    let mut dw = vec![0.0f64; oc * ic * k * k];
    let mut db = vec![0.0f64; oc];
    let mut dx = vec![0.0f64; n * ic * h * wd_];
    for ni in 0..n {
        for o in 0..oc {
            for oh in 0..h {
                for ow in 0..wd_ {
                    let g = dyd[((ni * oc + o) * h + oh) * wd_ + ow] as f64;
                    db[o] += g;
                    for c in 0..ic {
                        for kh in 0..k {
                            let ihs = oh + kh;
                            if ihs < pad || ihs - pad >= h {
                                continue;
                            }
                            let ih = ihs - pad;
                            for kw in 0..k {
                                let iws = ow + kw;
                                if iws < pad || iws - pad >= wd_ {
                                    continue;
                                }
                                let iw = iws - pad;
                                let xi = ((ni * ic + c) * h + ih) * wd_ + iw;
                                let wi = ((o * ic + c) * k + kh) * k + kw;
                                dw[wi] += g * xd[xi] as f64;
                                dx[xi] += g * wv[wi] as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(&[n, ic, h, wd_], dx.iter().map(|&v| v as f32).collect()).unwrap(),
        Tensor::from_vec(&[oc, ic, k, k], dw.iter().map(|&v| v as f32).collect()).unwrap(),
        Tensor::from_vec(&[oc], db.iter().map(|&v| v as f32).collect()).unwrap(),
    )
}

// ── ReLU ───────────────────────────────────────────────────────────

pub fn relu_forward(x: &Tensor) -> Tensor {
    Tensor::from_vec(
        x.shape(),
        x.data().iter().map(|&v| v.max(0.0)).collect(),
    )
    .unwrap()
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    Tensor::from_vec(
        x.shape(),
        x.data()
            .iter()
            .zip(dy.data())
            .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
            .collect(),
    )
    .unwrap()
}

// ── Global average pool ────────────────────────────────────────────

/// `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool_forward(x: &Tensor) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let inner = h * w;
    let xd = x.data();
    let mut y = vec![0.0f32; n * c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * inner;
            let mut acc = 0.0f64;
            for k in 0..inner {
                acc += xd[base + k] as f64;
            }
            y[ni * c + ci] = (acc / inner as f64) as f32;
        }
    }
    Tensor::from_vec(&[n, c], y).unwrap()
}

pub fn global_avg_pool_backward(x_shape: &[usize], dy: &Tensor) -> Tensor {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let inner = h * w;
    let dyd = dy.data();
    let mut dx = vec![0.0f32; n * c * inner];
    for ni in 0..n {
        for ci in 0..c {
            let g = dyd[ni * c + ci] / inner as f32;
            let base = (ni * c + ci) * inner;
            for k in 0..inner {
                dx[base + k] = g;
            }
        }
    }
    Tensor::from_vec(x_shape, dx).unwrap()
}

// ── Batch normalization ────────────────────────────────────────────

/// Per-channel statistics actually used by a BN forward pass.
#[derive(Debug, Clone)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn bn_dims(shape: &[usize]) -> (usize, usize, usize) {
    match shape {
        [n, c] => (*n, *c, 1),
        [n, c, h, w] => (*n, *c, h * w),
        other => panic!("batch norm expects rank 2 or 4, got {other:?}"),
    }
}

/// Per-channel mean and biased variance of the current minibatch.
pub fn bn_batch_stats(x: &Tensor) -> BnStats {
    let (n, c, inner) = bn_dims(x.shape());
    let m = (n * inner) as f64;
    let xd = x.data();
    let mut mean = vec![0.0f64; c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * inner;
            for k in 0..inner {
                mean[ci] += xd[base + k] as f64;
            }
        }
    }
    for v in mean.iter_mut() {
        *v /= m;
    }
    let mut var = vec![0.0f64; c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * inner;
            for k in 0..inner {
                let d = xd[base + k] as f64 - mean[ci];
                var[ci] += d * d;
            }
        }
    }
    for v in var.iter_mut() {
        *v /= m;
    }
    BnStats { mean, var }
}

/// `y = gamma · (x − mean)/sqrt(var + eps) + shift` with the given stats.
pub fn bn_forward(x: &Tensor, gamma: &Tensor, shift: &Tensor, stats: &BnStats, eps: f32) -> Tensor {
    let (n, c, inner) = bn_dims(x.shape());
    let xd = x.data();
    let g = gamma.data();
    let s = shift.data();
    let inv_std: Vec<f64> = stats.var.iter().map(|&v| 1.0 / (v + eps as f64).sqrt()).collect();
    let mut y = vec![0.0f32; xd.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * inner;
            for k in 0..inner {
                let xh = (xd[base + k] as f64 - stats.mean[ci]) * inv_std[ci];
                y[base + k] = (g[ci] as f64 * xh + s[ci] as f64) as f32;
            }
        }
    }
    Tensor::from_vec(x.shape(), y).unwrap()
}

/// Backward through BN when the stats came from the current minibatch;
/// the chain rule runs through mean and variance. Returns `(dx, dgamma, dshift)`.
pub fn bn_backward_batch(
    x: &Tensor,
    gamma: &Tensor,
    stats: &BnStats,
    eps: f32,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, c, inner) = bn_dims(x.shape());
    let m = (n * inner) as f64;
    let xd = x.data();
    let g = gamma.data();
    let dyd = dy.data();
    let inv_std: Vec<f64> = stats.var.iter().map(|&v| 1.0 / (v + eps as f64).sqrt()).collect();

    let mut dgamma = vec![0.0f64; c];
    let mut dshift = vec![0.0f64; c];
    let mut sum_dy = vec![0.0f64; c];
    let mut sum_dy_xh = vec![0.0f64; c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * inner;
            for k in 0..inner {
                let xh = (xd[base + k] as f64 - stats.mean[ci]) * inv_std[ci];
                let gy = dyd[base + k] as f64;
                dgamma[ci] += gy * xh;
                dshift[ci] += gy;
                sum_dy[ci] += gy;
                sum_dy_xh[ci] += gy * xh;
            }
        }
    }
    let mut dx = vec![0.0f32; xd.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * inner;
            for k in 0..inner {
                let xh = (xd[base + k] as f64 - stats.mean[ci]) * inv_std[ci];
                let gy = dyd[base + k] as f64;
                let v = g[ci] as f64 * inv_std[ci] / m * (m * gy - sum_dy[ci] - xh * sum_dy_xh[ci]);
                dx[base + k] = v as f32;
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), dx).unwrap(),
        Tensor::from_vec(&[c], dgamma.iter().map(|&v| v as f32).collect()).unwrap(),
        Tensor::from_vec(&[c], dshift.iter().map(|&v| v as f32).collect()).unwrap(),
    )
}

/// Backward through BN with frozen statistics: mean/var are constants, so
/// the pass is elementwise and per-example independent.
pub fn bn_backward_frozen(
    x: &Tensor,
    gamma: &Tensor,
    stats: &BnStats,
    eps: f32,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, c, inner) = bn_dims(x.shape());
    let xd = x.data();
    let g = gamma.data();
    let dyd = dy.data();
    let inv_std: Vec<f64> = stats.var.iter().map(|&v| 1.0 / (v + eps as f64).sqrt()).collect();

    let mut dgamma = vec![0.0f64; c];
    let mut dshift = vec![0.0f64; c];
    let mut dx = vec![0.0f32; xd.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * inner;
            for k in 0..inner {
                let xh = (xd[base + k] as f64 - stats.mean[ci]) * inv_std[ci];
                let gy = dyd[base + k] as f64;
                dgamma[ci] += gy * xh;
                dshift[ci] += gy;
                dx[base + k] = (gy * g[ci] as f64 * inv_std[ci]) as f32;
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), dx).unwrap(),
        Tensor::from_vec(&[c], dgamma.iter().map(|&v| v as f32).collect()).unwrap(),
        Tensor::from_vec(&[c], dshift.iter().map(|&v| v as f32).collect()).unwrap(),
    )
}

/// Moving-average update `S_t = (1−β)·Y_t + β·S_{t−1}` applied elementwise.
pub fn bn_update_running(stat: &Tensor, batch_value: &Tensor, beta: f64) -> Result<Tensor> {
    if stat.shape() != batch_value.shape() {
        return Err(shape_err("bn_update_running", stat.shape(), batch_value.shape()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!(
            "moving-average fraction must be in [0, 1], got {beta}"
        )));
    }
    let data = stat
        .data()
        .iter()
        .zip(batch_value.data())
        .map(|(&s, &y)| ((1.0 - beta) * y as f64 + beta * s as f64) as f32)
        .collect();
    Tensor::from_vec(stat.shape(), data)
}

// ── Softmax cross-entropy ──────────────────────────────────────────

/// Numerically stable per-row softmax probabilities in `f64`.
pub fn softmax_probs(logits_row: &[f32]) -> Vec<f64> {
    let max = logits_row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits_row.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits
/// (already scaled by `1/N`).
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<(f64, Tensor)> {
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(shape_err("softmax_cross_entropy", &[n], &[labels.len()]));
    }
    let ld = logits.data();
    let mut loss = 0.0f64;
    let mut dlogits = vec![0.0f32; n * c];
    for ni in 0..n {
        let y = labels[ni] as usize;
        if y >= c {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {c} classes"
            )));
        }
        let probs = softmax_probs(&ld[ni * c..(ni + 1) * c]);
        loss -= probs[y].max(f64::MIN_POSITIVE).ln();
        for ci in 0..c {
            let ind = if ci == y { 1.0 } else { 0.0 };
            dlogits[ni * c + ci] = ((probs[ci] - ind) / n as f64) as f32;
        }
    }
    Ok((loss / n as f64, Tensor::from_vec(&[n, c], dlogits)?))
}
