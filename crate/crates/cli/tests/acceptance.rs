//! Acceptance suite: one test per exit criterion, each printing a PASS line
//! with the measured values (run with `--nocapture` to see them all).
//!
//! Tolerances are pinned here, in code. Several criteria run the shipped
//! presets end to end; the loopback criterion spawns real `ebf` processes.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use ebf_cli::config::parse_config;
use ebf_cli::orchestrate::{SimulateOptions, run_simulate};
use ebf_core::component::{ComponentKind, ComponentSpec, Discipline, ServiceTimeModel};
use ebf_core::time::NS_PER_SEC;
use ebf_core::topology::{Plan, RawTopology, validate_topology};
use ebf_workload::{LoopMode, StopRule, WorkloadSpec};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ebf-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

/// Criterion 1: with mu = 20/s and lambda in {1.0, 9.1, 16.7}/s, `predict`
/// outputs mean latencies {52.6, 91.7, 303.0} ms and p99 latencies
/// {242.4, 422.5, 1395.5} ms, within 2 ms of the reference rounding
/// {53, 91, 303} and {242, 422, 1394}.
#[test]
fn acceptance_1_queueing_formula_reproduction() {
    let output = Command::new(env!("CARGO_BIN_EXE_ebf"))
        .args([
            "predict", "--lambda", "1.0", "--lambda", "9.1", "--lambda", "16.7", "--mu", "20",
            "--p", "99",
        ])
        .output()
        .expect("predict runs");
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    let mut rows = Vec::new();
    for line in stdout.lines().skip(1) {
        let cols: Vec<f64> = line
            .split_whitespace()
            .filter_map(|c| c.parse().ok())
            .collect();
        if cols.len() == 5 {
            rows.push((cols[0], cols[3], cols[4])); // lambda, T_mean ms, T_p ms
        }
    }
    assert_eq!(
        rows.len(),
        3,
        "expected three prediction rows in:\n{stdout}"
    );
    let expected = [
        (1.0, 52.6, 242.4, 53.0, 242.0),
        (9.1, 91.7, 422.5, 91.0, 422.0),
        (16.7, 303.0, 1395.5, 303.0, 1394.0),
    ];
    for ((lambda, mean, p99), (el, emean, ep99, ref_mean, ref_p99)) in rows.iter().zip(expected) {
        assert_eq!(*lambda, el);
        assert!(
            (mean - emean).abs() < 0.1,
            "lambda {lambda}: mean {mean} vs {emean}"
        );
        assert!(
            (p99 - ep99).abs() < 0.1,
            "lambda {lambda}: p99 {p99} vs {ep99}"
        );
        assert!(
            (mean - ref_mean).abs() <= 2.0,
            "lambda {lambda}: mean {mean} vs reference {ref_mean}"
        );
        assert!(
            (p99 - ref_p99).abs() <= 2.0,
            "lambda {lambda}: p99 {p99} vs reference {ref_p99}"
        );
    }
    println!(
        "acceptance 1 (queueing formulas): PASS — means {:?} ms, p99s {:?} ms",
        rows.iter().map(|r| r.1).collect::<Vec<_>>(),
        rows.iter().map(|r| r.2).collect::<Vec<_>>()
    );
}

/// Criterion 2: a single exponential(mu = 20/s) station under open-loop
/// Poisson lambda = 9.1/s with at least 10^6 completions lands within 2% of
/// the closed-form mean and 5% of the closed-form p99; Little's law holds
/// within 3%.
#[test]
fn acceptance_2_simulator_oracle_equivalence() {
    let topology = validate_topology(RawTopology {
        components: vec![ComponentSpec {
            id: "server".into(),
            kind: ComponentKind::NonAi,
            servers: 1,
            discipline: Discipline::Fifo,
            service: ServiceTimeModel::Exponential { rate_per_sec: 20.0 },
            quality: None,
        }],
        fragments: BTreeMap::new(),
        plan: Plan::Ref("server".into()),
        entry: "server".into(),
    })
    .unwrap();
    let workload = WorkloadSpec {
        mode: LoopMode::Open { rate_per_sec: 9.1 },
        fraction_text: 1.0,
        warmup_ns: 5 * NS_PER_SEC,
        stop: StopRule::Requests(1_050_000),
        seed: 7,
    };
    let mut acc = ebf_simengine::WarmupFilter::new(
        workload.warmup_ns,
        ebf_analytics::TraceAccumulator::new(),
    );
    let stats = ebf_simengine::run(&topology, &workload, &mut acc).unwrap();
    let acc = acc.inner;
    assert!(
        acc.count() >= 1_000_000,
        "only {} measured completions",
        acc.count()
    );
    assert!(stats.conserved());

    let mean_pred = ebf_queuing::mm1_mean_secs(9.1, 20.0).unwrap();
    let p99_pred = ebf_queuing::mm1_percentile_secs(9.1, 20.0, 99.0).unwrap();
    let mean_meas = acc.e2e().mean_ns().unwrap() / 1e9;
    let p99_meas = acc.e2e().percentile(99.0).unwrap() as f64 / 1e9;
    let mean_rel = (mean_meas - mean_pred).abs() / mean_pred;
    let p99_rel = (p99_meas - p99_pred).abs() / p99_pred;
    assert!(
        mean_rel < 0.02,
        "mean {mean_meas:.5}s vs {mean_pred:.5}s ({mean_rel:.4} rel)"
    );
    assert!(
        p99_rel < 0.05,
        "p99 {p99_meas:.5}s vs {p99_pred:.5}s ({p99_rel:.4} rel)"
    );
    let little = stats.little_law_ratio().unwrap();
    assert!(
        (little - 1.0).abs() < 0.03,
        "little's law ratio {little:.4}"
    );
    println!(
        "acceptance 2 (simulator vs closed form): PASS — mean {:.1} ms vs {:.1} ms ({:.2}% off), \
         p99 {:.1} ms vs {:.1} ms ({:.2}% off), little {:.4}",
        mean_meas * 1e3,
        mean_pred * 1e3,
        mean_rel * 100.0,
        p99_meas * 1e3,
        p99_pred * 1e3,
        p99_rel * 100.0,
        little
    );
}

/// Criterion 3: feeding the reference measured triples against the predicted
/// triples reproduces mean-of-ratios 3.4 ± 0.05 (means) and 8.1 ± 0.05 (p99).
#[test]
fn acceptance_3_gap_ratio_reproduction() {
    let lambdas = [1.0, 9.1, 16.7];
    let measured_mean: Vec<(f64, f64)> =
        lambdas.iter().copied().zip([0.123, 0.459, 0.852]).collect();
    let measured_p99: Vec<(f64, f64)> = lambdas
        .iter()
        .copied()
        .zip([0.953, 5.008, 11.980])
        .collect();
    let predicted_mean: Vec<(f64, f64)> = lambdas
        .iter()
        .map(|&l| (l, ebf_queuing::mm1_mean_secs(l, 20.0).unwrap()))
        .collect();
    let predicted_p99: Vec<(f64, f64)> = lambdas
        .iter()
        .map(|&l| (l, ebf_queuing::mm1_percentile_secs(l, 20.0, 99.0).unwrap()))
        .collect();
    let mean_gap = ebf_queuing::gap_report(&measured_mean, &predicted_mean).unwrap();
    let p99_gap = ebf_queuing::gap_report(&measured_p99, &predicted_p99).unwrap();
    assert!(
        (mean_gap.mean_ratio - 3.4).abs() <= 0.05,
        "mean gap {}",
        mean_gap.mean_ratio
    );
    assert!(
        (p99_gap.mean_ratio - 8.1).abs() <= 0.05,
        "p99 gap {}",
        p99_gap.mean_ratio
    );
    println!(
        "acceptance 3 (gap-ratio arithmetic): PASS — mean gap {:.2}x, p99 gap {:.2}x",
        mean_gap.mean_ratio, p99_gap.mean_ratio
    );
}

fn run_ecommerce_preset() -> ebf_cli::report::Report {
    let text = std::fs::read_to_string(configs_dir().join("ecommerce.toml")).unwrap();
    let cfg = parse_config(&text, &configs_dir()).unwrap();
    let opts = SimulateOptions {
        traces_out: None,
        arrivals_out: None,
        parallel_sweep: false,
    };
    run_simulate(&cfg, &opts).unwrap()
}

/// Criterion 4: on the shipped e-commerce preset, the end-to-end p99 exceeds
/// the searcher's p99 by more than 10x, and the M/M/1 prediction for the same
/// offered load underestimates the simulated mean by at least 2x.
///
/// Criterion 5: the preset's recommender row holds its fitted profile over at
/// least 10^5 requests: mean 48 ± 3 ms and p99 317 ± 20 ms.
#[test]
fn acceptance_4_and_5_ecommerce_preset_findings() {
    let report = run_ecommerce_preset();
    let run = &report.runs[0];
    assert!(
        run.latency.count >= 100_000,
        "only {} measured requests",
        run.latency.count
    );
    // The recommender stage dominates the breakdown (largest mean share).
    assert_eq!(run.latency.breakdown_module[0].name, "recommender");

    // Criterion 4: tail amplification of a fast stage.
    let searcher_amp = run.latency.amplification_module["searcher"];
    assert!(
        searcher_amp > 10.0,
        "searcher amplification only {searcher_amp:.1}x"
    );
    let gaps = report.gaps.as_ref().expect("preset declares predictions");
    assert!(
        gaps.mean.mean_ratio >= 2.0,
        "M/M/1 underestimates the mean only {:.2}x",
        gaps.mean.mean_ratio
    );
    println!(
        "acceptance 4 (tail amplification): PASS — e2e p99 / searcher p99 = {searcher_amp:.1}x, \
         simulated mean / M/M/1 mean = {:.1}x",
        gaps.mean.mean_ratio
    );

    // Criterion 5: the fitted recommender row persists.
    let rec = run
        .latency
        .breakdown_module
        .iter()
        .find(|r| r.name == "recommender")
        .expect("recommender row");
    let mean_ms = rec.mean_ns / 1e6;
    let p99_ms = rec.p99_ns as f64 / 1e6;
    assert!(
        (mean_ms - 48.0).abs() <= 3.0,
        "recommender mean {mean_ms:.2} ms"
    );
    assert!(
        (p99_ms - 317.0).abs() <= 20.0,
        "recommender p99 {p99_ms:.2} ms"
    );
    println!(
        "acceptance 5 (breakdown fit): PASS — recommender mean {mean_ms:.1} ms (48 ± 3), \
         p99 {p99_ms:.1} ms (317 ± 20) over {} requests",
        rec.count
    );
}

/// Criterion 6: nearest-rank percentile equals a brute-force sort-and-index
/// oracle on 1,000 random multisets (n <= 10^4) and is monotone in p.
#[test]
fn acceptance_6_percentile_oracle() {
    fn oracle(samples: &[u64], p: f64) -> u64 {
        // Brute force: full sort, pick the ceil(p/100 * n)-th smallest.
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let rank = ((p * sorted.len() as f64) / 100.0).ceil().max(1.0) as usize;
        sorted[rank - 1]
    }
    let mut rng = Pcg64::seed_from_u64(0xacce97);
    for case in 0..1000 {
        let n = rng.random_range(1..=10_000);
        let samples: Vec<u64> = (0..n).map(|_| rng.random_range(0..10_000_000)).collect();
        let p1 = rng.random_range(1..=1000) as f64 / 10.0;
        let p2 = rng.random_range(1..=1000) as f64 / 10.0;
        let v1 = ebf_analytics::percentile(&samples, p1).unwrap();
        assert_eq!(v1, oracle(&samples, p1), "case {case}: n={n} p={p1}");
        let v2 = ebf_analytics::percentile(&samples, p2).unwrap();
        if p1 <= p2 {
            assert!(v1 <= v2, "case {case}: not monotone at p {p1} vs {p2}");
        } else {
            assert!(v2 <= v1, "case {case}: not monotone at p {p2} vs {p1}");
        }
    }
    println!("acceptance 6 (percentile oracle): PASS — 1000 multisets, exact match, monotone");
}

/// Criterion 7: two simulate runs with identical config and seed produce
/// byte-identical trace files.
#[test]
fn acceptance_7_determinism() {
    let config_text = r#"
mode = "simulate"
seed = 4242

[workload]
loop = "open"
rate_per_sec = 40.0
fraction_text = 0.8
warmup = "2s"
stop = { requests = 20000 }

[topology]
entry = "front"
plan = "seq(front, par(left, right), back)"

[component.front]
kind = "non_ai"
servers = 2
service = { dist = "exponential", rate_per_sec = 400.0 }

[component.left]
kind = "ai"
servers = 2
service = { dist = "lognormal", mean = "8ms", p99 = "40ms" }

[component.right]
kind = "non_ai"
servers = 1
service = { dist = "shifted_pareto", shape = 2.1, scale_time = "1ms" }

[component.back]
kind = "non_ai"
servers = 1
service = { dist = "deterministic", value = "2ms" }
"#;
    let cfg = parse_config(config_text, Path::new(".")).unwrap();
    let a = scratch("determinism_a.ndjson");
    let b = scratch("determinism_b.ndjson");
    for path in [&a, &b] {
        let opts = SimulateOptions {
            traces_out: Some(path),
            arrivals_out: None,
            parallel_sweep: false,
        };
        run_simulate(&cfg, &opts).unwrap();
    }
    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(&b).unwrap();
    assert!(!bytes_a.is_empty());
    assert_eq!(
        bytes_a, bytes_b,
        "trace files differ between identical runs"
    );
    println!(
        "acceptance 7 (determinism): PASS — {} byte trace files identical across runs",
        bytes_a.len()
    );
}

struct ChildGuard(Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Criterion 8: encode/decode round-trips 10^4 random frames losslessly, and
/// a 3-stage loopback pipeline with deterministic 5/10/15 ms services
/// measures ~30 ms end-to-end with at most 10 ms of slack at p50.
#[test]
fn acceptance_8_wire_protocol_and_loopback_pipeline() {
    use ebf_netbench::frame::{Frame, MsgType, TsEntry, read_frame};

    // Round-trip 10^4 random frames.
    let mut rng = Pcg64::seed_from_u64(0x3bf1);
    for case in 0..10_000 {
        let types = [
            MsgType::Request,
            MsgType::Response,
            MsgType::Forward,
            MsgType::Health,
        ];
        let frame = Frame {
            msg_type: types[rng.random_range(0..types.len())],
            request_id: rng.random(),
            class: rng.random(),
            payload: (0..rng.random_range(0..256))
                .map(|_| rng.random())
                .collect(),
            timestamps: (0..rng.random_range(0..20))
                .map(|_| TsEntry {
                    component_hash: rng.random(),
                    enqueue_ns: rng.random(),
                    start_ns: rng.random(),
                    end_ns: rng.random(),
                })
                .collect(),
        };
        let decoded = read_frame(&mut frame.encode().as_slice()).unwrap();
        assert_eq!(decoded, frame, "case {case}");
    }

    // Real processes over loopback.
    let ports: Vec<u16> = (0..3)
        .map(|_| {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            listener.local_addr().unwrap().port()
        })
        .collect();
    let config_text = format!(
        r#"
mode = "network"
seed = 8

[workload]
loop = "open"
rate_per_sec = 20.0
fraction_text = 1.0
stop = {{ requests = 60 }}

[topology]
entry = "a"
plan = "seq(a, b, c)"

[component.a]
kind = "non_ai"
servers = 2
service = {{ dist = "deterministic", value = "5ms" }}

[component.b]
kind = "non_ai"
servers = 2
service = {{ dist = "deterministic", value = "10ms" }}

[component.c]
kind = "non_ai"
servers = 2
service = {{ dist = "deterministic", value = "15ms" }}

[network]
work = "sleep"
request_timeout = "5s"
payload_bytes = 32

[network.addresses]
a = "127.0.0.1:{}"
b = "127.0.0.1:{}"
c = "127.0.0.1:{}"
"#,
        ports[0], ports[1], ports[2]
    );
    let config_path = scratch("loopback.toml");
    std::fs::write(&config_path, &config_text).unwrap();

    let mut children: Vec<ChildGuard> = Vec::new();
    for (component, port) in ["b", "c", "a"].iter().zip([ports[1], ports[2], ports[0]]) {
        let child = Command::new(env!("CARGO_BIN_EXE_ebf"))
            .args([
                "serve",
                "--component",
                component,
                "--config",
                config_path.to_str().unwrap(),
                "--listen",
                &format!("127.0.0.1:{port}"),
            ])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .expect("serve spawns");
        children.push(ChildGuard(child));
    }

    let report_path = scratch("loopback_report.json");
    let status = Command::new(env!("CARGO_BIN_EXE_ebf"))
        .args([
            "drive",
            "--entry",
            &format!("127.0.0.1:{}", ports[0]),
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            report_path.to_str().unwrap(),
        ])
        .stdout(Stdio::null())
        .stderr(Stdio::inherit())
        .status()
        .expect("drive runs");
    assert!(status.success(), "drive exited with {status}");
    drop(children);

    let report = ebf_cli::report::read_report(&report_path).unwrap();
    let run = &report.runs[0];
    let drive = run.drive.as_ref().unwrap();
    assert!(drive.conserved());
    assert_eq!(drive.ok, 60, "{drive:?}");
    let p50_ms = run.latency.e2e.p50_ns as f64 / 1e6;
    assert!(
        (30.0..=40.0).contains(&p50_ms),
        "pipeline p50 {p50_ms:.2} ms outside 30 ms + 10 ms slack"
    );
    println!(
        "acceptance 8 (wire protocol + loopback): PASS — 10^4 frames round-tripped, \
         3-stage pipeline p50 {p50_ms:.2} ms"
    );
}

/// Criterion 9: the gain curve {(0.35, 0.019)} returns exactly 0.019 at 0.35
/// and 0 at 0; {(0.10, 0.003)} returns exactly 0.003 at 0.10.
#[test]
fn acceptance_9_trainer_interpolation() {
    use ebf_trainer::{UpdateMode, UpdatePolicy, interpolate_gain};
    let image_classifier = UpdatePolicy {
        mode: UpdateMode::Batch,
        interval_ns: 3_600_000_000_000,
        curve: vec![(0.35, 0.019)],
        base_accuracy: 0.9,
    };
    assert_eq!(interpolate_gain(&image_classifier, 0.35).unwrap(), 0.019);
    assert_eq!(interpolate_gain(&image_classifier, 0.0).unwrap(), 0.0);
    let ranker = UpdatePolicy {
        mode: UpdateMode::Streaming,
        interval_ns: 10_000_000_000,
        curve: vec![(0.10, 0.003)],
        base_accuracy: 0.9,
    };
    assert_eq!(interpolate_gain(&ranker, 0.10).unwrap(), 0.003);
    println!("acceptance 9 (trainer interpolation): PASS — exact curve values reproduced");
}

/// Criterion 10: all fourteen kernels match their brute-force oracles within
/// 1e-6 relative error over 100 random small shapes each; softmax rows
/// normalize to 1 ± 1e-9 (checked on the kernel's f64 normalization, which
/// f32 storage granularity cannot represent).
#[test]
fn acceptance_10_kernel_correctness() {
    use ebf_kernels::{
        ALL_KERNELS, KernelInputs, KernelKind, KernelSpec, execute, ops, reference_oracle,
        rel_close,
    };
    let mut rng = Pcg64::seed_from_u64(0xacce10);
    let mut checked = 0u64;
    for kind in ALL_KERNELS {
        for case in 0..100 {
            let mut spec = match kind {
                KernelKind::Convolution | KernelKind::MaxPooling | KernelKind::AvgPooling => {
                    let h = rng.random_range(2..=32);
                    let w = rng.random_range(2..=32);
                    let mut s = KernelSpec::new(kind, vec![h, w]);
                    s.window = Some((
                        rng.random_range(1..=h.min(4)),
                        rng.random_range(1..=w.min(4)),
                    ));
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
                _ => KernelSpec::new(kind, vec![rng.random_range(1..=512)]),
            };
            spec.seed = rng.random();
            spec.rate = rng.random_range(0.0..0.9);
            let inputs = KernelInputs::generate(&spec).unwrap();
            let tuned = execute(&spec, &inputs).unwrap();
            let oracle = reference_oracle(&spec, &inputs).unwrap();
            assert_eq!(tuned.len(), oracle.len());
            for (i, (&a, &b)) in tuned.iter().zip(&oracle).enumerate() {
                assert!(
                    rel_close(a, b, 1e-6),
                    "{kind:?} case {case} elem {i}: {a} vs {b}"
                );
                checked += 1;
            }
            if kind == KernelKind::Softmax {
                let KernelInputs::Unary { x } = &inputs else {
                    unreachable!()
                };
                let (rows, cols) = (spec.dims[0], spec.dims[1]);
                for row in ops::softmax_rows_f64(x, rows, cols).chunks_exact(cols) {
                    let sum: f64 = row.iter().sum();
                    assert!((sum - 1.0).abs() <= 1e-9, "softmax row sum {sum}");
                    assert!(row.iter().all(|&p| p > 0.0));
                }
            }
        }
    }
    println!(
        "acceptance 10 (kernel correctness): PASS — 14 kernels x 100 shapes, {checked} values \
         within 1e-6 of the oracles; softmax rows normalized to 1e-9"
    );
}

/// The shipped M/M/1 sweep config produces a report with three
/// measured/predicted pairs (a reduced-volume copy keeps this quick; the
/// full-volume statistical check is criterion 2).
#[test]
fn mm1_sweep_report_pairs_three_settings() {
    let text = std::fs::read_to_string(configs_dir().join("mm1.toml")).unwrap();
    let reduced = text.replace("requests = 1050000", "requests = 30000");
    let cfg = parse_config(&reduced, &configs_dir()).unwrap();
    let opts = SimulateOptions {
        traces_out: None,
        arrivals_out: None,
        parallel_sweep: true,
    };
    let report = run_simulate(&cfg, &opts).unwrap();
    assert_eq!(report.runs.len(), 3);
    assert_eq!(report.predictions.len(), 3);
    let gaps = report.gaps.as_ref().unwrap();
    assert_eq!(gaps.rows.len(), 3);
    // The simulator satisfies the model's assumptions here, so the gap sits
    // near 1 even at reduced volume.
    for row in &gaps.rows {
        assert!((0.8..1.2).contains(&row.mean_ratio), "gap {row:?}");
    }
    std::thread::sleep(Duration::from_millis(1));
}
