//! Definitional oracles: straightforward index loops implementing each
//! kernel's textbook definition. These stay independent of the tuned paths in
//! `ops` so each can check the other on small shapes.

// Index loops are the point here; keeping the oracle free of iterator or
// memcpy shortcuts is what makes it a second route.
#![allow(clippy::needless_range_loop, clippy::manual_memcpy)]

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
    let mut out = vec![0.0f32; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0f64;
            for ky in 0..kh {
                for kx in 0..kw {
                    let iv = input[(oy * stride + ky) * w + (ox * stride + kx)];
                    let fv = filter[ky * kw + kx];
                    acc += f64::from(iv) * f64::from(fv);
                }
            }
            out[oy * ow + ox] = acc as f32;
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
    let mut out = vec![0.0f32; outs];
    for o in 0..outs {
        let mut acc = f64::from(bias[o]);
        for i in 0..ins {
            acc += f64::from(x[i]) * f64::from(weights[i * outs + o]);
        }
        out[o] = acc as f32;
    }
    out
}

pub fn relu(x: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for i in 0..x.len() {
        out[i] = if x[i] > 0.0 { x[i] } else { 0.0 };
    }
    out
}

pub fn sigmoid(x: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for i in 0..x.len() {
        out[i] = (1.0f64 / (1.0 + f64::from(-x[i]).exp())) as f32;
    }
    out
}

pub fn tanh(x: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for i in 0..x.len() {
        out[i] = f64::from(x[i]).tanh() as f32;
    }
    out
}

pub fn max_pool(x: &[f32], h: usize, w: usize, kh: usize, kw: usize, stride: usize) -> Vec<f32> {
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let mut out = vec![0.0f32; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut best = f32::NEG_INFINITY;
            for ky in 0..kh {
                for kx in 0..kw {
                    let v = x[(oy * stride + ky) * w + (ox * stride + kx)];
                    if v > best {
                        best = v;
                    }
                }
            }
            out[oy * ow + ox] = best;
        }
    }
    out
}

pub fn avg_pool(x: &[f32], h: usize, w: usize, kh: usize, kw: usize, stride: usize) -> Vec<f32> {
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let mut out = vec![0.0f32; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0f64;
            for ky in 0..kh {
                for kx in 0..kw {
                    acc += f64::from(x[(oy * stride + ky) * w + (ox * stride + kx)]);
                }
            }
            out[oy * ow + ox] = (acc / (kh * kw) as f64) as f32;
        }
    }
    out
}

pub fn cosine_norm(x: &[f32]) -> Vec<f32> {
    let mut sumsq = 0.0f64;
    for i in 0..x.len() {
        sumsq += f64::from(x[i]) * f64::from(x[i]);
    }
    let denom = sumsq.sqrt() + f64::from(COSINE_NORM_EPS);
    let mut out = vec![0.0f32; x.len()];
    for i in 0..x.len() {
        out[i] = (f64::from(x[i]) / denom) as f32;
    }
    out
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
    let mut out = vec![0.0f32; n * features];
    for row in 0..n {
        for f in 0..features {
            let idx = row * features + f;
            let normalized = (f64::from(x[idx]) - f64::from(mean[f]))
                / (f64::from(var[f]) + f64::from(BATCH_NORM_EPS)).sqrt();
            out[idx] = (normalized * f64::from(gamma[f]) + f64::from(beta[f])) as f32;
        }
    }
    out
}

pub fn dropout(x: &[f32], mask: &[bool], rate: f32) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for i in 0..x.len() {
        out[i] = if mask[i] { x[i] / (1.0 - rate) } else { 0.0 };
    }
    out
}

pub fn elementwise_multiply(a: &[f32], b: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; a.len()];
    for i in 0..a.len() {
        out[i] = a[i] * b[i];
    }
    out
}

/// Plain exp/sum softmax (no max shift), fine on the small random inputs the
/// oracle sees.
pub fn softmax(x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        let mut sum = 0.0f64;
        for c in 0..cols {
            sum += f64::from(x[r * cols + c]).exp();
        }
        for c in 0..cols {
            out[r * cols + c] = (f64::from(x[r * cols + c]).exp() / sum) as f32;
        }
    }
    out
}

pub fn transpose(x: &[f32], h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; w * h];
    for i in 0..h {
        for j in 0..w {
            out[j * h + i] = x[i * w + j];
        }
    }
    out
}

pub fn memcpy(x: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for i in 0..x.len() {
        out[i] = x[i];
    }
    out
}
