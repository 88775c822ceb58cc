//! The tuned implementations against the definitional oracles, plus the
//! hand-checkable cases.

use ebf_kernels::{
    ALL_KERNELS, KernelInputs, KernelKind, KernelSpec, dropout_mask, execute, ops,
    reference_oracle, rel_close,
};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

const TOL: f32 = 1e-6;

fn random_spec(kind: KernelKind, rng: &mut Pcg64) -> KernelSpec {
    let mut spec = match kind {
        KernelKind::Convolution | KernelKind::MaxPooling | KernelKind::AvgPooling => {
            let h = rng.random_range(2..=32);
            let w = rng.random_range(2..=32);
            let kh = rng.random_range(1..=h.min(5));
            let kw = rng.random_range(1..=w.min(5));
            let mut s = KernelSpec::new(kind, vec![h, w]);
            s.window = Some((kh, kw));
            s.stride = rng.random_range(1..=2);
            s
        }
        KernelKind::FullyConnected
        | KernelKind::Softmax
        | KernelKind::BatchNorm
        | KernelKind::DataArrangement => KernelSpec::new(
            kind,
            vec![rng.random_range(1..=32), rng.random_range(1..=32)],
        ),
        _ => KernelSpec::new(kind, vec![rng.random_range(1..=1024)]),
    };
    spec.seed = rng.random();
    if kind == KernelKind::Dropout {
        spec.rate = rng.random_range(0.0..0.95);
    }
    spec
}

#[test]
fn every_kernel_matches_its_oracle_on_random_small_shapes() {
    let mut rng = Pcg64::seed_from_u64(0x0acc);
    for kind in ALL_KERNELS {
        for case in 0..100 {
            let spec = random_spec(kind, &mut rng);
            let inputs = KernelInputs::generate(&spec).unwrap();
            let tuned = execute(&spec, &inputs).unwrap();
            let oracle = reference_oracle(&spec, &inputs).unwrap();
            assert_eq!(
                tuned.len(),
                oracle.len(),
                "{kind:?} case {case}: length mismatch"
            );
            for (i, (&a, &b)) in tuned.iter().zip(&oracle).enumerate() {
                assert!(
                    rel_close(a, b, TOL),
                    "{kind:?} case {case} elem {i}: tuned {a} vs oracle {b} (spec {spec:?})"
                );
            }
        }
    }
}

#[test]
fn fully_connected_identity_weights_pass_input_through() {
    let ins = 8;
    let spec = KernelSpec::new(KernelKind::FullyConnected, vec![ins, ins]);
    let x: Vec<f32> = (0..ins).map(|i| i as f32 - 3.5).collect();
    let mut weights = vec![0.0f32; ins * ins];
    for i in 0..ins {
        weights[i * ins + i] = 1.0;
    }
    let inputs = KernelInputs::FullyConnected {
        x: x.clone(),
        weights,
        bias: vec![0.0; ins],
    };
    assert_eq!(execute(&spec, &inputs).unwrap(), x);
    assert_eq!(reference_oracle(&spec, &inputs).unwrap(), x);
}

#[test]
fn relu_clamps_negatives() {
    let spec = KernelSpec::new(KernelKind::Relu, vec![3]);
    let inputs = KernelInputs::Unary {
        x: vec![-1.0, 0.0, 2.0],
    };
    assert_eq!(execute(&spec, &inputs).unwrap(), vec![0.0, 0.0, 2.0]);
}

#[test]
fn max_pool_two_by_two_stride_two() {
    let mut spec = KernelSpec::new(KernelKind::MaxPooling, vec![2, 2]);
    spec.window = Some((2, 2));
    spec.stride = 2;
    let inputs = KernelInputs::Unary {
        x: vec![1.0, 2.0, 3.0, 4.0],
    };
    assert_eq!(execute(&spec, &inputs).unwrap(), vec![4.0]);
}

#[test]
fn conv_four_by_four_matches_quadruple_loop() {
    let mut rng = Pcg64::seed_from_u64(44);
    let mut spec = KernelSpec::new(KernelKind::Convolution, vec![4, 4]);
    spec.window = Some((3, 3));
    spec.seed = rng.random();
    let inputs = KernelInputs::generate(&spec).unwrap();
    let tuned = execute(&spec, &inputs).unwrap();
    let oracle = reference_oracle(&spec, &inputs).unwrap();
    assert_eq!(tuned.len(), 4); // (4-3+1)^2
    for (&a, &b) in tuned.iter().zip(&oracle) {
        assert!(rel_close(a, b, TOL), "{a} vs {b}");
    }
}

#[test]
fn batch_norm_centered_input_is_zero_mean() {
    // mean = the input's own mean, unit variance, gamma 1, beta 0: output is
    // a pure shift, so its mean vanishes.
    let n = 16;
    let features = 4;
    let mut rng = Pcg64::seed_from_u64(9);
    let x: Vec<f32> = (0..n * features)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let mut mean = vec![0.0f32; features];
    for row in x.chunks_exact(features) {
        for (f, &v) in row.iter().enumerate() {
            mean[f] += v / n as f32;
        }
    }
    let spec = KernelSpec::new(KernelKind::BatchNorm, vec![n, features]);
    let inputs = KernelInputs::BatchNorm {
        x,
        mean,
        var: vec![1.0; features],
        gamma: vec![1.0; features],
        beta: vec![0.0; features],
    };
    let out = execute(&spec, &inputs).unwrap();
    for f in 0..features {
        let col_mean: f32 = out.iter().skip(f).step_by(features).sum::<f32>() / n as f32;
        assert!(col_mean.abs() < 1e-6, "feature {f} mean {col_mean}");
    }
}

#[test]
fn softmax_rows_normalize() {
    let mut rng = Pcg64::seed_from_u64(0x50f7);
    for _ in 0..50 {
        let rows = rng.random_range(1..=8);
        let cols = rng.random_range(1..=32);
        let x: Vec<f32> = (0..rows * cols)
            .map(|_| rng.random_range(-4.0..4.0))
            .collect();
        // The f64 normalization is exact to 1e-9.
        let probs = ops::softmax_rows_f64(&x, rows, cols);
        for row in probs.chunks_exact(cols) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9, "row sum {sum}");
            assert!(row.iter().all(|&p| p > 0.0));
        }
        // The stored f32 activations agree to storage granularity.
        let spec = KernelSpec::new(KernelKind::Softmax, vec![rows, cols]);
        let stored = execute(&spec, &KernelInputs::Unary { x }).unwrap();
        for row in stored.chunks_exact(cols) {
            let sum: f64 = row.iter().map(|&p| f64::from(p)).sum();
            assert!((sum - 1.0).abs() <= 1e-5, "stored row sum {sum}");
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }
}

#[test]
fn sigmoid_and_tanh_stay_inside_open_intervals() {
    let mut rng = Pcg64::seed_from_u64(0x7a17);
    let x: Vec<f32> = (0..10_000).map(|_| rng.random_range(-6.0..6.0)).collect();
    let sig = execute(
        &KernelSpec::new(KernelKind::Sigmoid, vec![x.len()]),
        &KernelInputs::Unary { x: x.clone() },
    )
    .unwrap();
    assert!(sig.iter().all(|&v| v > 0.0 && v < 1.0));
    let th = execute(
        &KernelSpec::new(KernelKind::Tanh, vec![x.len()]),
        &KernelInputs::Unary { x },
    )
    .unwrap();
    assert!(th.iter().all(|&v| v > -1.0 && v < 1.0));
}

#[test]
fn memcpy_is_bit_identical_and_transpose_involutes() {
    let mut rng = Pcg64::seed_from_u64(0xc0);
    let x: Vec<f32> = (0..4096).map(|_| rng.random::<f32>()).collect();
    let copied = execute(
        &KernelSpec::new(KernelKind::Memcpy, vec![x.len()]),
        &KernelInputs::Unary { x: x.clone() },
    )
    .unwrap();
    assert!(
        x.iter()
            .zip(&copied)
            .all(|(a, b)| a.to_bits() == b.to_bits())
    );

    let (h, w) = (7, 13);
    let x: Vec<f32> = (0..h * w).map(|i| i as f32).collect();
    let once = ops::transpose(&x, h, w);
    let twice = ops::transpose(&once, w, h);
    assert_eq!(x, twice);
}

#[test]
fn dropout_zeroes_and_rescales_deterministically() {
    let mut spec = KernelSpec::new(KernelKind::Dropout, vec![1000]);
    spec.rate = 0.4;
    spec.seed = 123;
    let x = vec![1.0f32; 1000];
    let out = execute(&spec, &KernelInputs::Unary { x: x.clone() }).unwrap();
    let again = execute(&spec, &KernelInputs::Unary { x }).unwrap();
    assert_eq!(out, again);
    let mask = dropout_mask(123, 1000, 0.4);
    for (v, keep) in out.iter().zip(&mask) {
        if *keep {
            assert!(rel_close(*v, 1.0 / 0.6, 1e-6));
        } else {
            assert_eq!(*v, 0.0);
        }
    }
    // Survivor share tracks 1 - rate.
    let kept = out.iter().filter(|&&v| v != 0.0).count() as f64 / 1000.0;
    assert!((kept - 0.6).abs() < 0.05, "kept share {kept}");
}
