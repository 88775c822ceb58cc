//! The run report: a single JSON document per run. Field names carry units
//! (`_ns`, `_ms`, `_per_sec`). Everything is deterministic for a given config
//! and seed except the `timing` subsection, which isolates wall-clock
//! metadata. Reports are written atomically (temp file, then rename) so an
//! interrupted run never leaves a truncated report behind.

use std::io::Write;
use std::path::Path;

use ebf_analytics::{LatencyReport, QualityOutcome};
use ebf_core::time::ms_from_ns;
use ebf_kernels::KernelResult;
use ebf_netbench::DriveStats;
use ebf_queuing::GapSummary;
use ebf_simengine::RunStats;
use ebf_trainer::TradeoffRecord;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioCfg;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub tool_version: String,
    pub config_hash: String,
    pub mode: String,
    pub seed: u64,
    pub percentile_method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioCfg>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<RunReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<PredictionRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaps: Option<GapReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounded_throughput: Option<BoundedThroughputRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<TrainerReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kernels: Vec<KernelResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Wall-clock metadata; the only nondeterministic subsection.
    pub timing: TimingMeta,
}

impl Report {
    pub fn new(config_hash: String, mode: &str, seed: u64) -> Self {
        Report {
            tool: "ebf".to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            mode: mode.to_string(),
            seed,
            percentile_method: ebf_analytics::PERCENTILE_METHOD.to_string(),
            scenario: None,
            runs: Vec::new(),
            predictions: Vec::new(),
            gaps: None,
            bounded_throughput: None,
            trainer: None,
            quality: None,
            kernels: Vec::new(),
            warnings: Vec::new(),
            timing: TimingMeta::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingMeta {
    pub started_unix_ms: u64,
    pub wall_ms: u64,
}

impl TimingMeta {
    pub fn started_now() -> Self {
        let started_unix_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        TimingMeta {
            started_unix_ms,
            wall_ms: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offered_rate_per_sec: Option<f64>,
    pub latency: LatencyReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<RunStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<DriveStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub lambda_per_sec: f64,
    pub mu_per_sec: f64,
    pub p: f64,
    pub t_mean_ms: f64,
    pub t_p_ms: f64,
    /// Erlang-C M/M/k mean, when a server count was configured. An extension
    /// beyond the single-server formulas, validated against the simulator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmk_mean_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub lambda_per_sec: f64,
    pub measured_mean_ms: f64,
    pub predicted_mean_ms: f64,
    pub mean_ratio: f64,
    pub measured_p99_ms: f64,
    pub predicted_p99_ms: f64,
    pub p99_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    pub mean: GapSummary,
    pub p99: GapSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedThroughputRow {
    pub bound_ms: f64,
    /// Largest swept rate whose p99 stayed within the bound; absent when
    /// even the smallest rate violated it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rate_per_sec: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerReport {
    pub records: Vec<TradeoffRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_interval_ns: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_accuracy: Option<f64>,
}

/// Writes the report atomically: serialize to `<path>.tmp`, then rename.
pub fn write_report(report: &Report, path: &Path) -> std::io::Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(json.as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn read_report(path: &Path) -> std::io::Result<Report> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(std::io::Error::other)
}

/// Human-readable rendering, milliseconds throughout.
pub fn pretty_print(report: &Report, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "report: {} v{} (config {})",
        report.tool, report.tool_version, report.config_hash
    )?;
    writeln!(
        out,
        "mode: {}   seed: {}   percentiles: {}",
        report.mode, report.seed, report.percentile_method
    )?;
    if let Some(s) = &report.scenario {
        writeln!(out, "scenario: {} [{}]", s.name, s.metrics.join(", "))?;
    }
    for run in &report.runs {
        writeln!(out)?;
        let rate = run
            .offered_rate_per_sec
            .map(|r| format!(" @ {r}/s offered"))
            .unwrap_or_default();
        writeln!(
            out,
            "run {}{rate}: {} measured requests",
            run.label, run.latency.count
        )?;
        let l = &run.latency;
        writeln!(
            out,
            "  e2e latency (from intended send): mean {:8.2} ms  p50 {:8.2}  p90 {:8.2}  p99 {:8.2}  p99.9 {:8.2}",
            l.e2e.mean_ns / 1e6,
            ms_from_ns(l.e2e.p50_ns),
            ms_from_ns(l.e2e.p90_ns),
            ms_from_ns(l.e2e.p99_ns),
            ms_from_ns(l.e2e.p999_ns),
        )?;
        writeln!(
            out,
            "  e2e latency (from actual send):   mean {:8.2} ms  p50 {:8.2}  p90 {:8.2}  p99 {:8.2}  p99.9 {:8.2}",
            l.from_send.mean_ns / 1e6,
            ms_from_ns(l.from_send.p50_ns),
            ms_from_ns(l.from_send.p90_ns),
            ms_from_ns(l.from_send.p99_ns),
            ms_from_ns(l.from_send.p999_ns),
        )?;
        writeln!(
            out,
            "  errors: {}  timeouts: {}  warm-up discarded: {}",
            l.error_count, l.timeout_count, l.warmup_discarded
        )?;
        for (title, rows) in [
            ("module breakdown", &l.breakdown_module),
            ("component breakdown", &l.breakdown_component),
        ] {
            if rows.is_empty() {
                continue;
            }
            writeln!(out, "  {title}:")?;
            writeln!(
                out,
                "    {:<24} {:>10} {:>12} {:>12} {:>12} {:>8} {:>14}",
                "node", "count", "mean ms", "p90 ms", "p99 ms", "share", "service ms"
            )?;
            for row in rows {
                writeln!(
                    out,
                    "    {:<24} {:>10} {:>12.3} {:>12.3} {:>12.3} {:>7.1}% {:>14.3}",
                    row.name,
                    row.count,
                    row.mean_ns / 1e6,
                    ms_from_ns(row.p90_ns),
                    ms_from_ns(row.p99_ns),
                    row.share_of_e2e_mean * 100.0,
                    row.service_mean_ns / 1e6,
                )?;
            }
        }
        if !l.amplification_component.is_empty() {
            writeln!(out, "  tail amplification (e2e p99 / node p99):")?;
            for (node, ratio) in &l.amplification_component {
                writeln!(out, "    {node:<24} {ratio:>8.1}x")?;
            }
        }
        if let Some(sim) = &run.sim {
            writeln!(
                out,
                "  sim: injected {}  in-flight at end {}  lambda {:.3}/s  quota shortfalls {}  training runs {}",
                sim.injected,
                sim.in_flight_at_end,
                sim.lambda_measured_per_sec,
                sim.quota_shortfalls,
                sim.training_runs
            )?;
        }
        if let Some(drive) = &run.drive {
            writeln!(
                out,
                "  drive: issued {}  ok {}  errors {}  timeouts {}  multi-host {}",
                drive.issued, drive.ok, drive.errors, drive.timeouts, drive.multi_host
            )?;
        }
    }
    if !report.predictions.is_empty() {
        writeln!(out)?;
        writeln!(out, "queueing predictions:")?;
        writeln!(
            out,
            "  {:>10} {:>10} {:>6} {:>12} {:>12} {:>14}",
            "lambda/s", "mu/s", "p", "T_mean ms", "T_p ms", "M/M/k mean ms"
        )?;
        for p in &report.predictions {
            let mmk = p
                .mmk_mean_ms
                .map(|v| format!("{v:>14.1}"))
                .unwrap_or_else(|| format!("{:>14}", "-"));
            writeln!(
                out,
                "  {:>10.2} {:>10.2} {:>6.1} {:>12.1} {:>12.1} {mmk}",
                p.lambda_per_sec, p.mu_per_sec, p.p, p.t_mean_ms, p.t_p_ms
            )?;
        }
    }
    if let Some(gaps) = &report.gaps {
        writeln!(out)?;
        writeln!(out, "measured vs predicted gaps:")?;
        for row in &gaps.rows {
            writeln!(
                out,
                "  lambda {:>6.2}/s: mean {:>9.1} ms vs {:>8.1} ms ({:.2}x)   p99 {:>9.1} ms vs {:>8.1} ms ({:.2}x)",
                row.lambda_per_sec,
                row.measured_mean_ms,
                row.predicted_mean_ms,
                row.mean_ratio,
                row.measured_p99_ms,
                row.predicted_p99_ms,
                row.p99_ratio,
            )?;
        }
        writeln!(
            out,
            "  average gap: mean {:.1}x (geometric {:.1}x)   p99 {:.1}x (geometric {:.1}x)",
            gaps.mean.mean_ratio,
            gaps.mean.geomean_ratio,
            gaps.p99.mean_ratio,
            gaps.p99.geomean_ratio
        )?;
    }
    if let Some(bt) = &report.bounded_throughput {
        match bt.max_rate_per_sec {
            Some(rate) => writeln!(
                out,
                "latency-bounded throughput (p99 <= {:.1} ms): {rate}/s",
                bt.bound_ms
            )?,
            None => writeln!(
                out,
                "latency-bounded throughput (p99 <= {:.1} ms): no swept rate sustains the bound",
                bt.bound_ms
            )?,
        }
    }
    if let Some(t) = &report.trainer {
        writeln!(out)?;
        writeln!(out, "model-update tradeoff:")?;
        writeln!(
            out,
            "  {:>12} {:>8} {:>12} {:>10} {:>10} {:>12} {:>9}",
            "interval s", "updates", "cost s", "overhead", "gain", "objective", "feasible"
        )?;
        for r in &t.records {
            writeln!(
                out,
                "  {:>12.0} {:>8} {:>12.0} {:>9.1}% {:>9.2}% {:>12.4} {:>9}",
                r.interval_ns as f64 / 1e9,
                r.updates,
                r.cost_ns as f64 / 1e9,
                r.overhead_fraction * 100.0,
                r.accuracy_gain * 100.0,
                r.objective,
                r.feasible,
            )?;
        }
        if let Some(chosen) = t.chosen_interval_ns {
            writeln!(out, "  chosen interval: {} s", chosen / 1_000_000_000)?;
        }
    }
    if let Some(q) = &report.quality {
        writeln!(
            out,
            "quality-ensured: {} target {:.4} achieved {:.4} (boundary {:.4}) -> {}",
            q.metric,
            q.target,
            q.achieved,
            q.boundary,
            if q.pass { "PASS" } else { "FAIL" }
        )?;
    }
    if !report.kernels.is_empty() {
        writeln!(out)?;
        writeln!(out, "kernels:")?;
        writeln!(
            out,
            "  {:<22} {:>14} {:>12} {:>12} {:>12} {:>12} {:>10}",
            "name", "dims", "min us", "mean us", "p99 us", "flops", "bytes"
        )?;
        for k in &report.kernels {
            let dims = k
                .dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            writeln!(
                out,
                "  {:<22} {:>14} {:>12.2} {:>12.2} {:>12.2} {:>12} {:>10}",
                k.name,
                dims,
                k.timing.min_ns as f64 / 1e3,
                k.timing.mean_ns / 1e3,
                k.timing.p99_ns as f64 / 1e3,
                k.flops,
                k.bytes_touched,
            )?;
        }
    }
    for w in &report.warnings {
        writeln!(out, "warning: {w}")?;
    }
    Ok(())
}

/// Breakdown CSV: one row per node and level, milliseconds.
pub fn write_breakdown_csv(report: &Report, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "run,level,node,count,mean_ms,p90_ms,p99_ms,share_of_e2e_mean,service_mean_ms"
    )?;
    for run in &report.runs {
        for (level, rows) in [
            ("module", &run.latency.breakdown_module),
            ("component", &run.latency.breakdown_component),
        ] {
            for r in rows {
                writeln!(
                    out,
                    "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    run.label,
                    level,
                    r.name,
                    r.count,
                    r.mean_ns / 1e6,
                    ms_from_ns(r.p90_ns),
                    ms_from_ns(r.p99_ns),
                    r.share_of_e2e_mean,
                    r.service_mean_ns / 1e6,
                )?;
            }
        }
    }
    Ok(())
}
