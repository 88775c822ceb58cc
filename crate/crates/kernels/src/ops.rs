//! Tuned kernel implementations: slice-window iteration, hoisted row bases,
//! max-shifted softmax. Reductions accumulate in f64.

use crate::{BATCH_NORM_EPS, COSINE_NORM_EPS};

pub fn conv2d(
    input: &[f32],
    h: usize,
    w: usize,
    filter: &[f32],
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f32> {
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        let iy = oy * stride;
        for ox in 0..ow {
            let ix = ox * stride;
            let mut acc = 0.0f64;
            for (ky, filter_row) in filter.chunks_exact(kw).enumerate() {
                let row = &input[(iy + ky) * w + ix..(iy + ky) * w + ix + kw];
                acc += row
                    .iter()
                    .zip(filter_row)
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum::<f64>();
            }
            out.push(acc as f32);
        }
    }
    out
}

pub fn fully_connected(
    x: &[f32],
    weights: &[f32],
    bias: &[f32],
    ins: usize,
    outs: usize,
) -> Vec<f32> {
    // weights are row-major [ins × outs]; accumulate output-row-at-a-time so
    // the weight matrix streams through linearly.
    debug_assert_eq!(weights.len(), ins * outs);
    let mut acc = vec![0.0f64; outs];
    for (i, row) in weights.chunks_exact(outs).enumerate() {
        let xi = f64::from(x[i]);
        for (a, &wv) in acc.iter_mut().zip(row) {
            *a += xi * f64::from(wv);
        }
    }
    acc.iter()
        .zip(bias)
        .map(|(&a, &b)| (a + f64::from(b)) as f32)
        .collect()
}

pub fn relu(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn sigmoid(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
}

pub fn tanh(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| v.tanh()).collect()
}

pub fn max_pool(x: &[f32], h: usize, w: usize, kh: usize, kw: usize, stride: usize) -> Vec<f32> {
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut best = f32::NEG_INFINITY;
            for ky in 0..kh {
                let base = (oy * stride + ky) * w + ox * stride;
                for &v in &x[base..base + kw] {
                    best = best.max(v);
                }
            }
            out.push(best);
        }
    }
    out
}

pub fn avg_pool(x: &[f32], h: usize, w: usize, kh: usize, kw: usize, stride: usize) -> Vec<f32> {
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let area = (kh * kw) as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0f64;
            for ky in 0..kh {
                let base = (oy * stride + ky) * w + ox * stride;
                acc += x[base..base + kw]
                    .iter()
                    .map(|&v| f64::from(v))
                    .sum::<f64>();
            }
            out.push((acc / area) as f32);
        }
    }
    out
}

pub fn cosine_norm(x: &[f32]) -> Vec<f32> {
    let norm = x
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    let denom = norm + f64::from(COSINE_NORM_EPS);
    x.iter().map(|&v| (f64::from(v) / denom) as f32).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn batch_norm(
    x: &[f32],
    n: usize,
    features: usize,
    mean: &[f32],
    var: &[f32],
    gamma: &[f32],
    beta: &[f32],
) -> Vec<f32> {
    // Precompute per-feature scale = gamma / sqrt(var + eps).
    let scale: Vec<f64> = var
        .iter()
        .zip(gamma)
        .map(|(&v, &g)| f64::from(g) / (f64::from(v) + f64::from(BATCH_NORM_EPS)).sqrt())
        .collect();
    let mut out = Vec::with_capacity(n * features);
    for row in x.chunks_exact(features) {
        for (f, &v) in row.iter().enumerate() {
            out.push(((f64::from(v) - f64::from(mean[f])) * scale[f] + f64::from(beta[f])) as f32);
        }
    }
    out
}

pub fn dropout(x: &[f32], mask: &[bool], rate: f32) -> Vec<f32> {
    let scale = 1.0 / (1.0 - rate);
    x.iter()
        .zip(mask)
        .map(|(&v, &keep)| if keep { v * scale } else { 0.0 })
        .collect()
}

pub fn elementwise_multiply(a: &[f32], b: &[f32]) -> Vec<f32> {
    a.iter().zip(b).map(|(&x, &y)| x * y).collect()
}

/// Row-wise softmax with the usual max shift for numerical stability; the
/// exponentials and normalization run in f64.
pub fn softmax(x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    softmax_rows_f64(x, rows, cols)
        .into_iter()
        .map(|v| v as f32)
        .collect()
}

/// The f64 probabilities behind `softmax`, exposed so normalization can be
/// verified at tolerances below f32 storage granularity.
pub fn softmax_rows_f64(x: &[f32], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), rows * cols);
    let mut out = Vec::with_capacity(rows * cols);
    for row in x.chunks_exact(cols) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = row.iter().map(|&v| f64::from(v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    out
}

/// Layout transpose: row-major [h × w] to row-major [w × h].
pub fn transpose(x: &[f32], h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; w * h];
    for (i, row) in x.chunks_exact(w).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[j * h + i] = v;
        }
    }
    out
}

pub fn memcpy(x: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    out.copy_from_slice(x);
    out
}
