//! Run orchestration: executes the configured mode (sweeping rates when
//! configured), feeds traces to analytics, attaches queueing predictions and
//! gap ratios, and assembles the report.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use ebf_analytics::{QualityOutcome, RunCounters, TraceAccumulator};
use ebf_core::time::{Ns, ms_from_ns};
use ebf_core::trace::{RequestTrace, TraceSink};
use ebf_netbench::{DriveSpec, drive_load};
use ebf_simengine::Simulation;
use ebf_workload::{LoopMode, WorkloadSpec};
use thiserror::Error;

use crate::config::{Mode, ParsedConfig, QualityPlan, effective_quality};
use crate::report::{
    BoundedThroughputRow, GapReport, GapRow, PredictionRow, Report, RunReport, TrainerReport,
};

#[derive(Debug, Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("acceptance threshold violated: {0}")]
    Threshold(String),
}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 1,
            AppError::Runtime(_) => 2,
            AppError::Threshold(_) => 3,
        }
    }
}

impl From<crate::config::ConfigError> for AppError {
    fn from(e: crate::config::ConfigError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<ebf_simengine::SimError> for AppError {
    fn from(e: ebf_simengine::SimError) -> Self {
        AppError::Runtime(e.to_string())
    }
}

impl From<ebf_netbench::NetError> for AppError {
    fn from(e: ebf_netbench::NetError) -> Self {
        AppError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

/// Per-run sink stack: stamps the achieved-quality value onto each trace,
/// streams every trace (warm-up included) to the NDJSON file when asked, and
/// feeds only measured traces to the accumulator.
struct RunSink<'a> {
    quality: Option<f64>,
    file: Option<BufWriter<File>>,
    warmup_ns: Ns,
    acc: &'a mut TraceAccumulator,
}

impl TraceSink for RunSink<'_> {
    fn accept(&mut self, mut trace: RequestTrace) {
        if self.quality.is_some() {
            trace.quality_achieved = self.quality;
        }
        if let Some(f) = &mut self.file {
            // Infallible at this layer; IO errors surface on flush.
            let _ = serde_json::to_writer(&mut *f, &trace);
            let _ = f.write_all(b"\n");
        }
        if trace.arrival_ns >= self.warmup_ns {
            self.acc.record(&trace);
        }
    }
}

pub struct SimulateOptions<'a> {
    pub traces_out: Option<&'a Path>,
    pub arrivals_out: Option<&'a Path>,
    pub parallel_sweep: bool,
}

struct RunOutput {
    label: String,
    offered: Option<f64>,
    latency: ebf_analytics::LatencyReport,
    sim: ebf_simengine::RunStats,
}

pub fn run_simulate(cfg: &ParsedConfig, opts: &SimulateOptions) -> Result<Report, AppError> {
    if cfg.mode != Mode::Simulate {
        return Err(AppError::Config(
            "this config is not in simulate mode".into(),
        ));
    }
    let mut report = Report::new(cfg.config_hash.clone(), "simulate", cfg.seed);
    report.scenario = cfg.file.scenario.clone();

    let (Some(topology), Some(workload)) = (&cfg.topology, &cfg.workload) else {
        // Predict-only config: report carries predictions and no traces.
        attach_predictions(cfg, &mut report)?;
        return Ok(report);
    };

    if !cfg.sweep.is_empty() && (opts.traces_out.is_some() || opts.arrivals_out.is_some()) {
        return Err(AppError::Config(
            "trace/arrival export is for single runs; drop the [sweep] section".into(),
        ));
    }

    if let Some(path) = opts.arrivals_out {
        if matches!(workload.mode, LoopMode::Open { .. }) {
            let events = ebf_workload::gen_open_loop(workload)
                .map_err(|e| AppError::Runtime(e.to_string()))?;
            let mut out = BufWriter::new(File::create(path)?);
            ebf_workload::export_arrivals(&events, &mut out)?;
            out.flush()?;
        } else {
            return Err(AppError::Config(
                "arrival export applies to open-loop workloads only".into(),
            ));
        }
    }

    let quality_value = cfg
        .quality
        .as_ref()
        .and_then(|q| effective_quality(q, cfg.trainer.as_ref()));

    let points: Vec<Option<f64>> = if cfg.sweep.is_empty() {
        vec![None]
    } else {
        cfg.sweep.iter().copied().map(Some).collect()
    };

    let outputs: Vec<Result<RunOutput, AppError>> = if opts.parallel_sweep && points.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = points
                .iter()
                .map(|&point| {
                    scope.spawn(move || {
                        run_one_sim(cfg, topology, workload, point, quality_value, None)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        })
    } else {
        points
            .iter()
            .map(|&point| {
                run_one_sim(
                    cfg,
                    topology,
                    workload,
                    point,
                    quality_value,
                    opts.traces_out,
                )
            })
            .collect()
    };

    let mut sweep_rows: Vec<(f64, Ns)> = Vec::new();
    for output in outputs {
        let output = output?;
        for w in &output.sim.warnings {
            report.warnings.push(format!("run {}: {w}", output.label));
        }
        if let Some(rate) = output.offered {
            sweep_rows.push((rate, output.latency.e2e.p99_ns));
        }
        report.runs.push(RunReport {
            label: output.label,
            offered_rate_per_sec: output.offered,
            latency: output.latency,
            sim: Some(output.sim),
            drive: None,
        });
    }

    attach_quality(cfg, quality_value, &mut report)?;
    attach_trainer(cfg, &mut report);
    attach_predictions(cfg, &mut report)?;
    attach_gaps(cfg, &mut report)?;

    if let (Some(bound), false) = (cfg.p99_bound_ns, sweep_rows.is_empty()) {
        let max_rate = ebf_analytics::latency_bounded_throughput(&sweep_rows, bound)
            .map_err(|e| AppError::Runtime(e.to_string()))?;
        report.bounded_throughput = Some(BoundedThroughputRow {
            bound_ms: ms_from_ns(bound),
            max_rate_per_sec: max_rate,
        });
    }

    check_asserts(cfg, &report)?;
    Ok(report)
}

fn run_one_sim(
    cfg: &ParsedConfig,
    topology: &std::sync::Arc<ebf_core::topology::Topology>,
    workload: &WorkloadSpec,
    rate_override: Option<f64>,
    quality_value: Option<f64>,
    traces_out: Option<&Path>,
) -> Result<RunOutput, AppError> {
    let mut workload = workload.clone();
    if let Some(rate) = rate_override {
        match workload.mode {
            LoopMode::Open { .. } => workload.mode = LoopMode::Open { rate_per_sec: rate },
            LoopMode::Closed { .. } => {
                return Err(AppError::Config(
                    "rate sweeps require an open-loop workload".into(),
                ));
            }
        }
    }
    let mut acc = TraceAccumulator::with_options(cfg.histogram_cap, &cfg.extra_percentiles);
    let file = traces_out
        .map(|p| File::create(p).map(BufWriter::new))
        .transpose()?;
    let mut sink = RunSink {
        quality: quality_value,
        file,
        warmup_ns: workload.warmup_ns,
        acc: &mut acc,
    };

    let mut sim = Simulation::new(topology, &workload);
    if let Some(load) = cfg.trainer.as_ref().and_then(|t| t.training_load()) {
        sim = sim.with_training(load);
    }
    let stats = sim.run(&mut sink)?;
    if let Some(mut f) = sink.file.take() {
        f.flush()?;
    }

    let latency = acc
        .finish(RunCounters {
            errors: 0,
            timeouts: 0,
            warmup_discarded: stats.discarded_warmup,
        })
        .map_err(|e| AppError::Runtime(format!("no measured traces: {e}")))?;
    let (label, offered) = match rate_override {
        Some(rate) => (format!("lambda={rate}"), Some(rate)),
        None => match workload.mode {
            LoopMode::Open { rate_per_sec } => ("run".to_string(), Some(rate_per_sec)),
            LoopMode::Closed { .. } => ("run".to_string(), None),
        },
    };
    Ok(RunOutput {
        label,
        offered,
        latency,
        sim: stats,
    })
}

pub fn run_drive(
    cfg: &ParsedConfig,
    entry: SocketAddr,
    traces_out: Option<&PathBuf>,
) -> Result<Report, AppError> {
    if cfg.mode != Mode::Network {
        return Err(AppError::Config(
            "drive needs a config with mode = \"network\"".into(),
        ));
    }
    let (Some(topology), Some(workload)) = (&cfg.topology, &cfg.workload) else {
        return Err(AppError::Config(
            "drive needs [topology] and [workload] sections".into(),
        ));
    };
    let Some(network) = &cfg.network else {
        return Err(AppError::Config("drive needs a [network] section".into()));
    };
    for c in topology.components() {
        if c.id != topology.entry() && !network.addresses.contains_key(&c.id) {
            return Err(AppError::Config(format!(
                "network.addresses is missing component '{}'",
                c.id
            )));
        }
    }

    let quality_value = cfg
        .quality
        .as_ref()
        .and_then(|q| effective_quality(q, cfg.trainer.as_ref()));
    let spec = DriveSpec {
        entry,
        topology: topology.clone(),
        addresses: network.addresses.clone(),
        workload: workload.clone(),
        request_timeout: network.request_timeout,
        payload_bytes: network.payload_bytes,
        quality_achieved: quality_value,
        health_wait: std::time::Duration::from_secs(10),
    };
    let outcome = drive_load(&spec)?;

    if let Some(path) = traces_out {
        let mut out = BufWriter::new(File::create(path)?);
        for t in &outcome.traces {
            serde_json::to_writer(&mut out, t).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }

    let (discarded, measured) = ebf_workload::split_warmup(outcome.traces, workload.warmup_ns);
    let mut acc = TraceAccumulator::with_options(cfg.histogram_cap, &cfg.extra_percentiles);
    for t in &measured {
        acc.record(t);
    }
    let latency = acc
        .finish(RunCounters {
            errors: outcome.stats.errors,
            timeouts: outcome.stats.timeouts,
            warmup_discarded: discarded.len() as u64,
        })
        .map_err(|e| AppError::Runtime(format!("no measured traces: {e}")))?;

    let mut report = Report::new(cfg.config_hash.clone(), "network", cfg.seed);
    report.scenario = cfg.file.scenario.clone();
    if outcome.stats.multi_host {
        report.warnings.push(
            "run spans multiple hosts: per-span durations are trustworthy, absolute \
             cross-host ordering is not"
                .to_string(),
        );
    }
    report.runs.push(RunReport {
        label: "drive".to_string(),
        offered_rate_per_sec: match workload.mode {
            LoopMode::Open { rate_per_sec } => Some(rate_per_sec),
            LoopMode::Closed { .. } => None,
        },
        latency,
        sim: None,
        drive: Some(outcome.stats),
    });

    attach_quality(cfg, quality_value, &mut report)?;
    attach_trainer(cfg, &mut report);
    attach_predictions(cfg, &mut report)?;
    attach_gaps(cfg, &mut report)?;
    check_asserts(cfg, &report)?;
    Ok(report)
}

fn attach_predictions(cfg: &ParsedConfig, report: &mut Report) -> Result<(), AppError> {
    let Some(p) = &cfg.prediction else {
        return Ok(());
    };
    for &lambda in &p.lambdas {
        let mean = ebf_queuing::mm1_mean_secs(lambda, p.mu_per_sec)
            .map_err(|e| AppError::Config(format!("prediction at lambda {lambda}: {e}")))?;
        let t_p = ebf_queuing::mm1_percentile_secs(lambda, p.mu_per_sec, p.percentile)
            .map_err(|e| AppError::Config(format!("prediction at lambda {lambda}: {e}")))?;
        let mmk_mean_ms = match p.servers {
            Some(k) if k > 1 => Some(
                ebf_queuing::mmk_mean_secs(lambda, p.mu_per_sec, k)
                    .map_err(|e| AppError::Config(format!("M/M/{k} at lambda {lambda}: {e}")))?
                    * 1e3,
            ),
            _ => None,
        };
        report.predictions.push(PredictionRow {
            lambda_per_sec: lambda,
            mu_per_sec: p.mu_per_sec,
            p: p.percentile,
            t_mean_ms: mean * 1e3,
            t_p_ms: t_p * 1e3,
            mmk_mean_ms,
        });
    }
    Ok(())
}

/// Pairs measured runs with declared predictions, in order, and reports
/// measured-over-predicted ratios for the mean and the tail percentile.
fn attach_gaps(cfg: &ParsedConfig, report: &mut Report) -> Result<(), AppError> {
    let Some(p) = &cfg.prediction else {
        return Ok(());
    };
    if report.runs.is_empty() || report.predictions.is_empty() {
        return Ok(());
    }
    if report.runs.len() != p.lambdas.len() {
        return Err(AppError::Config(format!(
            "cannot pair {} measured runs with {} declared prediction rates",
            report.runs.len(),
            p.lambdas.len()
        )));
    }
    let mut measured_mean = Vec::new();
    let mut measured_p99 = Vec::new();
    let mut predicted_mean = Vec::new();
    let mut predicted_p99 = Vec::new();
    let mut rows = Vec::new();
    for (run, pred) in report.runs.iter().zip(&report.predictions) {
        let lambda = pred.lambda_per_sec;
        let m_mean = run.latency.e2e.mean_ns / 1e9;
        let m_p99 = run.latency.e2e.p99_ns as f64 / 1e9;
        measured_mean.push((lambda, m_mean));
        measured_p99.push((lambda, m_p99));
        predicted_mean.push((lambda, pred.t_mean_ms / 1e3));
        predicted_p99.push((lambda, pred.t_p_ms / 1e3));
        rows.push(GapRow {
            lambda_per_sec: lambda,
            measured_mean_ms: m_mean * 1e3,
            predicted_mean_ms: pred.t_mean_ms,
            mean_ratio: m_mean * 1e3 / pred.t_mean_ms,
            measured_p99_ms: m_p99 * 1e3,
            predicted_p99_ms: pred.t_p_ms,
            p99_ratio: m_p99 * 1e3 / pred.t_p_ms,
        });
    }
    let mean = ebf_queuing::gap_report(&measured_mean, &predicted_mean)
        .map_err(|e| AppError::Config(e.to_string()))?;
    let p99 = ebf_queuing::gap_report(&measured_p99, &predicted_p99)
        .map_err(|e| AppError::Config(e.to_string()))?;
    report.gaps = Some(GapReport { rows, mean, p99 });
    Ok(())
}

fn attach_trainer(cfg: &ParsedConfig, report: &mut Report) {
    let Some(t) = &cfg.trainer else { return };
    if t.candidates.is_empty() {
        return;
    }
    let params = ebf_trainer::EvalParams {
        horizon_ns: t.horizon_ns,
        per_update_cost_ns: t.per_update_cost_ns,
        objective_weight: t.objective_weight,
        max_interval_ns: t.max_interval_ns,
    };
    match ebf_trainer::evaluate_policy(&t.policy, &t.candidates, &params) {
        Ok(records) => {
            let chosen = ebf_trainer::choose_interval(&records).ok();
            let derived = chosen.and_then(|c| {
                records
                    .iter()
                    .find(|r| r.interval_ns == c)
                    .map(|r| (t.policy.base_accuracy + r.accuracy_gain).min(1.0))
            });
            report.trainer = Some(TrainerReport {
                records,
                chosen_interval_ns: chosen,
                derived_accuracy: derived,
            });
        }
        Err(e) => report
            .warnings
            .push(format!("trainer evaluation skipped: {e}")),
    }
}

fn attach_quality(
    cfg: &ParsedConfig,
    quality_value: Option<f64>,
    report: &mut Report,
) -> Result<(), AppError> {
    let Some(plan): Option<&QualityPlan> = cfg.quality.as_ref() else {
        return Ok(());
    };
    let Some(achieved) = quality_value else {
        return Err(AppError::Config(
            "quality check configured but no achieved value is available \
             (set quality.achieved or a trainer curve)"
                .into(),
        ));
    };
    let boundary = plan.attr.target * (1.0 - plan.tolerance);
    let pass = achieved >= boundary;
    let stats = if pass {
        report.runs.first().map(|r| r.latency.e2e.clone())
    } else {
        None
    };
    report.quality = Some(QualityOutcome {
        metric: plan.attr.metric.clone(),
        target: plan.attr.target,
        tolerance: plan.tolerance,
        achieved,
        boundary,
        pass,
        stats,
    });
    Ok(())
}

/// Post-run CI gates from the `[assert]` section; violations exit 3.
fn check_asserts(cfg: &ParsedConfig, report: &Report) -> Result<(), AppError> {
    let Some(a) = &cfg.asserts else { return Ok(()) };
    if let Some(bound) = a.p99_max_ns {
        for run in &report.runs {
            if run.latency.e2e.p99_ns > bound {
                return Err(AppError::Threshold(format!(
                    "run {}: e2e p99 {:.2} ms exceeds the configured bound {:.2} ms",
                    run.label,
                    ms_from_ns(run.latency.e2e.p99_ns),
                    ms_from_ns(bound)
                )));
            }
        }
    }
    if let Some(bound) = a.mean_max_ns {
        for run in &report.runs {
            if run.latency.e2e.mean_ns > bound as f64 {
                return Err(AppError::Threshold(format!(
                    "run {}: e2e mean {:.2} ms exceeds the configured bound {:.2} ms",
                    run.label,
                    run.latency.e2e.mean_ns / 1e6,
                    ms_from_ns(bound)
                )));
            }
        }
    }
    if let Some(expected) = a.quality_pass {
        match &report.quality {
            Some(q) if q.pass == expected => {}
            Some(q) => {
                return Err(AppError::Threshold(format!(
                    "quality gate: expected pass={expected}, got pass={} (achieved {:.4})",
                    q.pass, q.achieved
                )));
            }
            None => {
                return Err(AppError::Config(
                    "assert.quality_pass set but no [quality] section is configured".into(),
                ));
            }
        }
    }
    Ok(())
}
