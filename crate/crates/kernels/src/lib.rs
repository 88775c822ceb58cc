//! Micro benchmarks for the fourteen units of computation that dominate the
//! profiled component workloads: convolution, fully connected, relu, sigmoid,
//! tanh, max pooling, average pooling, cosine normalization, batch
//! normalization, dropout, element-wise multiply, softmax, data arrangement,
//! and memcpy.
//!
//! Tensors are 32-bit floats; reductions accumulate in f64 on both the tuned
//! path (`ops`) and the definitional oracle path (`reference`), which stay
//! independent so one can check the other. Timing is wall clock and therefore
//! never asserted for determinism, only for shape (min ≤ mean ≤ p99).

pub mod ops;
pub mod reference;

use std::time::Instant;

use ebf_core::hash::fnv64;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Epsilon inside batch normalization's variance denominator.
pub const BATCH_NORM_EPS: f32 = 1e-5;
/// Epsilon added to the L2 norm in cosine normalization.
pub const COSINE_NORM_EPS: f32 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("unknown kernel '{0}'")]
    UnknownKernel(String),
    #[error("shape mismatch for {kernel}: {reason}")]
    ShapeMismatch {
        kernel: &'static str,
        reason: String,
    },
}

/// The fourteen kernels.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Convolution,
    FullyConnected,
    Relu,
    Sigmoid,
    Tanh,
    MaxPooling,
    AvgPooling,
    CosineNorm,
    BatchNorm,
    Dropout,
    ElementwiseMultiply,
    Softmax,
    DataArrangement,
    Memcpy,
}

pub const ALL_KERNELS: [KernelKind; 14] = [
    KernelKind::Convolution,
    KernelKind::FullyConnected,
    KernelKind::Relu,
    KernelKind::Sigmoid,
    KernelKind::Tanh,
    KernelKind::MaxPooling,
    KernelKind::AvgPooling,
    KernelKind::CosineNorm,
    KernelKind::BatchNorm,
    KernelKind::Dropout,
    KernelKind::ElementwiseMultiply,
    KernelKind::Softmax,
    KernelKind::DataArrangement,
    KernelKind::Memcpy,
];

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Convolution => "convolution",
            KernelKind::FullyConnected => "fully_connected",
            KernelKind::Relu => "relu",
            KernelKind::Sigmoid => "sigmoid",
            KernelKind::Tanh => "tanh",
            KernelKind::MaxPooling => "max_pooling",
            KernelKind::AvgPooling => "avg_pooling",
            KernelKind::CosineNorm => "cosine_norm",
            KernelKind::BatchNorm => "batch_norm",
            KernelKind::Dropout => "dropout",
            KernelKind::ElementwiseMultiply => "elementwise_multiply",
            KernelKind::Softmax => "softmax",
            KernelKind::DataArrangement => "data_arrangement",
            KernelKind::Memcpy => "memcpy",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_KERNELS
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| KernelError::UnknownKernel(s.to_string()))
    }
}

/// Shape, repetition, and seed parameters for one kernel invocation.
///
/// `dims` is interpreted per kernel: `[h, w]` for convolution, pooling, and
/// data arrangement; `[rows, cols]` for softmax and batch norm (rows ×
/// features); `[in, out]` for fully connected; `[n]` for the element-wise
/// kernels and memcpy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub dims: Vec<usize>,
    /// Filter/window size for convolution and pooling.
    pub window: Option<(usize, usize)>,
    pub stride: usize,
    /// Dropout keep-out rate in [0, 1).
    pub rate: f32,
    pub reps: u32,
    pub seed: u64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, dims: Vec<usize>) -> Self {
        KernelSpec {
            kind,
            dims,
            window: None,
            stride: 1,
            rate: 0.5,
            reps: 10,
            seed: 0,
        }
    }

    fn fail(&self, reason: String) -> KernelError {
        KernelError::ShapeMismatch {
            kernel: self.kind.name(),
            reason,
        }
    }

    fn dims2(&self) -> Result<(usize, usize), KernelError> {
        match self.dims[..] {
            [h, w] => Ok((h, w)),
            _ => Err(self.fail(format!("expected 2 dimensions, got {:?}", self.dims))),
        }
    }

    fn dims1(&self) -> Result<usize, KernelError> {
        match self.dims[..] {
            [n] => Ok(n),
            _ => Err(self.fail(format!("expected 1 dimension, got {:?}", self.dims))),
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(self.fail(format!("all dimensions must be >= 1, got {:?}", self.dims)));
        }
        if self.stride == 0 {
            return Err(self.fail("stride must be >= 1".into()));
        }
        match self.kind {
            KernelKind::Convolution | KernelKind::MaxPooling | KernelKind::AvgPooling => {
                let (h, w) = self.dims2()?;
                let (kh, kw) = self
                    .window
                    .ok_or_else(|| self.fail("window size is required".into()))?;
                if kh == 0 || kw == 0 {
                    return Err(self.fail("window dimensions must be >= 1".into()));
                }
                if kh > h || kw > w {
                    return Err(self.fail(format!("window {kh}x{kw} does not fit input {h}x{w}")));
                }
            }
            KernelKind::FullyConnected
            | KernelKind::Softmax
            | KernelKind::BatchNorm
            | KernelKind::DataArrangement => {
                self.dims2()?;
            }
            KernelKind::Dropout => {
                self.dims1()?;
                if !(0.0..1.0).contains(&self.rate) {
                    return Err(
                        self.fail(format!("dropout rate must be in [0, 1), got {}", self.rate))
                    );
                }
            }
            KernelKind::Relu
            | KernelKind::Sigmoid
            | KernelKind::Tanh
            | KernelKind::CosineNorm
            | KernelKind::ElementwiseMultiply
            | KernelKind::Memcpy => {
                self.dims1()?;
            }
        }
        Ok(())
    }

    /// Output size in elements after the kernel runs.
    fn pooled_dims(&self) -> Result<(usize, usize), KernelError> {
        let (h, w) = self.dims2()?;
        let (kh, kw) = self.window.expect("validated window");
        Ok(((h - kh) / self.stride + 1, (w - kw) / self.stride + 1))
    }
}

/// Inputs for one kernel invocation. Fields are public so tests can build
/// degenerate cases (identity weights, constant rows) directly.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelInputs {
    Unary {
        x: Vec<f32>,
    },
    Binary {
        a: Vec<f32>,
        b: Vec<f32>,
    },
    Conv {
        input: Vec<f32>,
        filter: Vec<f32>,
    },
    FullyConnected {
        x: Vec<f32>,
        weights: Vec<f32>,
        bias: Vec<f32>,
    },
    BatchNorm {
        x: Vec<f32>,
        mean: Vec<f32>,
        var: Vec<f32>,
        gamma: Vec<f32>,
        beta: Vec<f32>,
    },
}

impl KernelInputs {
    /// Deterministic inputs for the spec's seed: standard normals, with
    /// positive variances for batch norm.
    pub fn generate(spec: &KernelSpec) -> Result<Self, KernelError> {
        spec.validate()?;
        let mut rng = Pcg64::seed_from_u64(spec.seed);
        let mut normal =
            |n: usize| -> Vec<f32> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        Ok(match spec.kind {
            KernelKind::Convolution => {
                let (h, w) = spec.dims2()?;
                let (kh, kw) = spec.window.expect("validated window");
                KernelInputs::Conv {
                    input: normal(h * w),
                    filter: normal(kh * kw),
                }
            }
            KernelKind::FullyConnected => {
                let (ins, outs) = spec.dims2()?;
                KernelInputs::FullyConnected {
                    x: normal(ins),
                    weights: normal(ins * outs),
                    bias: normal(outs),
                }
            }
            KernelKind::BatchNorm => {
                let (n, features) = spec.dims2()?;
                let x = normal(n * features);
                let mean = normal(features);
                let var: Vec<f32> = normal(features).iter().map(|v| v.abs() + 0.25).collect();
                let gamma = normal(features);
                let beta = normal(features);
                KernelInputs::BatchNorm {
                    x,
                    mean,
                    var,
                    gamma,
                    beta,
                }
            }
            KernelKind::ElementwiseMultiply => {
                let n = spec.dims1()?;
                KernelInputs::Binary {
                    a: normal(n),
                    b: normal(n),
                }
            }
            KernelKind::Softmax | KernelKind::DataArrangement => {
                let (h, w) = spec.dims2()?;
                KernelInputs::Unary { x: normal(h * w) }
            }
            KernelKind::MaxPooling | KernelKind::AvgPooling => {
                let (h, w) = spec.dims2()?;
                KernelInputs::Unary { x: normal(h * w) }
            }
            _ => KernelInputs::Unary {
                x: normal(spec.dims1()?),
            },
        })
    }
}

/// Deterministic dropout mask: element i survives when the i-th draw from a
/// PCG-64 stream seeded by `seed` is at least `rate`. Both execution routes
/// share this derivation so their outputs are comparable.
pub fn dropout_mask(seed: u64, len: usize, rate: f32) -> Vec<bool> {
    use rand::RngExt;
    let mut rng = Pcg64::seed_from_u64(seed);
    (0..len).map(|_| rng.random::<f32>() >= rate).collect()
}

/// Runs the tuned implementation of the kernel on the given inputs.
pub fn execute(spec: &KernelSpec, inputs: &KernelInputs) -> Result<Vec<f32>, KernelError> {
    dispatch(spec, inputs, false)
}

/// Runs the definitional loop implementation: the brute-force oracle for
/// small shapes.
pub fn reference_oracle(spec: &KernelSpec, inputs: &KernelInputs) -> Result<Vec<f32>, KernelError> {
    dispatch(spec, inputs, true)
}

fn dispatch(
    spec: &KernelSpec,
    inputs: &KernelInputs,
    oracle: bool,
) -> Result<Vec<f32>, KernelError> {
    spec.validate()?;
    let wrong =
        |expected: &str| spec.fail(format!("inputs do not match kernel, expected {expected}"));
    Ok(match (spec.kind, inputs) {
        (KernelKind::Convolution, KernelInputs::Conv { input, filter }) => {
            let (h, w) = spec.dims2()?;
            let (kh, kw) = spec.window.expect("validated window");
            check_len(spec, "input", input.len(), h * w)?;
            check_len(spec, "filter", filter.len(), kh * kw)?;
            if oracle {
                reference::conv2d(input, h, w, filter, kh, kw, spec.stride)
            } else {
                ops::conv2d(input, h, w, filter, kh, kw, spec.stride)
            }
        }
        (KernelKind::FullyConnected, KernelInputs::FullyConnected { x, weights, bias }) => {
            let (ins, outs) = spec.dims2()?;
            check_len(spec, "x", x.len(), ins)?;
            check_len(spec, "weights", weights.len(), ins * outs)?;
            check_len(spec, "bias", bias.len(), outs)?;
            if oracle {
                reference::fully_connected(x, weights, bias, ins, outs)
            } else {
                ops::fully_connected(x, weights, bias, ins, outs)
            }
        }
        (KernelKind::Relu, KernelInputs::Unary { x }) => {
            if oracle {
                reference::relu(x)
            } else {
                ops::relu(x)
            }
        }
        (KernelKind::Sigmoid, KernelInputs::Unary { x }) => {
            if oracle {
                reference::sigmoid(x)
            } else {
                ops::sigmoid(x)
            }
        }
        (KernelKind::Tanh, KernelInputs::Unary { x }) => {
            if oracle {
                reference::tanh(x)
            } else {
                ops::tanh(x)
            }
        }
        (KernelKind::MaxPooling, KernelInputs::Unary { x }) => {
            let (h, w) = spec.dims2()?;
            let (kh, kw) = spec.window.expect("validated window");
            check_len(spec, "x", x.len(), h * w)?;
            if oracle {
                reference::max_pool(x, h, w, kh, kw, spec.stride)
            } else {
                ops::max_pool(x, h, w, kh, kw, spec.stride)
            }
        }
        (KernelKind::AvgPooling, KernelInputs::Unary { x }) => {
            let (h, w) = spec.dims2()?;
            let (kh, kw) = spec.window.expect("validated window");
            check_len(spec, "x", x.len(), h * w)?;
            if oracle {
                reference::avg_pool(x, h, w, kh, kw, spec.stride)
            } else {
                ops::avg_pool(x, h, w, kh, kw, spec.stride)
            }
        }
        (KernelKind::CosineNorm, KernelInputs::Unary { x }) => {
            if oracle {
                reference::cosine_norm(x)
            } else {
                ops::cosine_norm(x)
            }
        }
        (
            KernelKind::BatchNorm,
            KernelInputs::BatchNorm {
                x,
                mean,
                var,
                gamma,
                beta,
            },
        ) => {
            let (n, features) = spec.dims2()?;
            check_len(spec, "x", x.len(), n * features)?;
            check_len(spec, "mean", mean.len(), features)?;
            if oracle {
                reference::batch_norm(x, n, features, mean, var, gamma, beta)
            } else {
                ops::batch_norm(x, n, features, mean, var, gamma, beta)
            }
        }
        (KernelKind::Dropout, KernelInputs::Unary { x }) => {
            let mask = dropout_mask(spec.seed, x.len(), spec.rate);
            if oracle {
                reference::dropout(x, &mask, spec.rate)
            } else {
                ops::dropout(x, &mask, spec.rate)
            }
        }
        (KernelKind::ElementwiseMultiply, KernelInputs::Binary { a, b }) => {
            check_len(spec, "b", b.len(), a.len())?;
            if oracle {
                reference::elementwise_multiply(a, b)
            } else {
                ops::elementwise_multiply(a, b)
            }
        }
        (KernelKind::Softmax, KernelInputs::Unary { x }) => {
            let (rows, cols) = spec.dims2()?;
            check_len(spec, "x", x.len(), rows * cols)?;
            if oracle {
                reference::softmax(x, rows, cols)
            } else {
                ops::softmax(x, rows, cols)
            }
        }
        (KernelKind::DataArrangement, KernelInputs::Unary { x }) => {
            let (h, w) = spec.dims2()?;
            check_len(spec, "x", x.len(), h * w)?;
            if oracle {
                reference::transpose(x, h, w)
            } else {
                ops::transpose(x, h, w)
            }
        }
        (KernelKind::Memcpy, KernelInputs::Unary { x }) => {
            if oracle {
                reference::memcpy(x)
            } else {
                ops::memcpy(x)
            }
        }
        _ => return Err(wrong("matching input variant")),
    })
}

fn check_len(
    spec: &KernelSpec,
    what: &str,
    got: usize,
    expected: usize,
) -> Result<(), KernelError> {
    if got == expected {
        Ok(())
    } else {
        Err(spec.fail(format!("{what} has {got} elements, expected {expected}")))
    }
}

/// Relative closeness with a unit floor: |a − b| ≤ tol · max(1, |a|, |b|).
/// The floor keeps near-zero reduction outputs (where cancellation makes
/// strict relative error meaningless) comparable at absolute tolerance.
pub fn rel_close(a: f32, b: f32, tol: f32) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelTiming {
    pub min_ns: u64,
    pub mean_ns: f64,
    pub p99_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelResult {
    pub name: String,
    pub dims: Vec<usize>,
    pub reps: u32,
    pub seed: u64,
    /// FNV-1a 64 over the output's little-endian bit patterns; deterministic
    /// given seed and shape.
    pub checksum: String,
    pub timing: KernelTiming,
    pub bytes_touched: u64,
    pub flops: u64,
}

/// Generates inputs, runs one warm-up pass, then times `reps` invocations of
/// the tuned implementation.
pub fn run_kernel(spec: &KernelSpec) -> Result<KernelResult, KernelError> {
    spec.validate()?;
    let inputs = KernelInputs::generate(spec)?;
    let output = execute(spec, &inputs)?; // warm-up, also the checksummed output
    let reps = spec.reps.max(1);
    let mut times_ns: Vec<u64> = Vec::with_capacity(reps as usize);
    for _ in 0..reps {
        let started = Instant::now();
        let out = execute(spec, &inputs)?;
        times_ns.push(started.elapsed().as_nanos() as u64);
        std::hint::black_box(out);
    }
    times_ns.sort_unstable();
    let min_ns = times_ns[0].max(1);
    let mean_ns = times_ns.iter().sum::<u64>() as f64 / times_ns.len() as f64;
    let p99_idx = ((99.0 * times_ns.len() as f64) / 100.0).ceil() as usize;
    let p99_ns = times_ns[p99_idx.clamp(1, times_ns.len()) - 1].max(1);

    let mut bytes = Vec::with_capacity(output.len() * 4);
    for v in &output {
        bytes.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    Ok(KernelResult {
        name: spec.kind.name().to_string(),
        dims: spec.dims.clone(),
        reps,
        seed: spec.seed,
        checksum: format!("{:016x}", fnv64(&bytes)),
        timing: KernelTiming {
            min_ns,
            mean_ns: mean_ns.max(1.0),
            p99_ns,
        },
        bytes_touched: bytes_touched(spec, &inputs, output.len()),
        flops: flops_estimate(spec),
    })
}

fn input_elems(inputs: &KernelInputs) -> usize {
    match inputs {
        KernelInputs::Unary { x } => x.len(),
        KernelInputs::Binary { a, b } => a.len() + b.len(),
        KernelInputs::Conv { input, filter } => input.len() + filter.len(),
        KernelInputs::FullyConnected { x, weights, bias } => x.len() + weights.len() + bias.len(),
        KernelInputs::BatchNorm {
            x,
            mean,
            var,
            gamma,
            beta,
        } => x.len() + mean.len() + var.len() + gamma.len() + beta.len(),
    }
}

fn bytes_touched(_spec: &KernelSpec, inputs: &KernelInputs, out_len: usize) -> u64 {
    ((input_elems(inputs) + out_len) * std::mem::size_of::<f32>()) as u64
}

fn flops_estimate(spec: &KernelSpec) -> u64 {
    let n: usize = spec.dims.iter().product();
    (match spec.kind {
        KernelKind::Convolution => {
            let Ok((oh, ow)) = spec.pooled_dims() else {
                return 0;
            };
            let (kh, kw) = spec.window.unwrap_or((1, 1));
            oh * ow * kh * kw * 2
        }
        KernelKind::FullyConnected => {
            let (ins, outs) = (spec.dims[0], spec.dims[1]);
            ins * outs * 2 + outs
        }
        KernelKind::MaxPooling | KernelKind::AvgPooling => {
            let Ok((oh, ow)) = spec.pooled_dims() else {
                return 0;
            };
            let (kh, kw) = spec.window.unwrap_or((1, 1));
            oh * ow * kh * kw
        }
        KernelKind::Relu | KernelKind::Dropout | KernelKind::ElementwiseMultiply => n,
        KernelKind::Sigmoid | KernelKind::Tanh => n * 4,
        KernelKind::CosineNorm => n * 3,
        KernelKind::BatchNorm => n * 5,
        KernelKind::Softmax => n * 4,
        KernelKind::DataArrangement | KernelKind::Memcpy => 0,
    }) as u64
}
