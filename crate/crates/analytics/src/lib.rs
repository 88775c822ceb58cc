//! Statistics over trace sets: percentiles, per-module and per-component
//! latency breakdowns, tail-amplification ratios, quality-ensured filtering,
//! and latency-bounded throughput.
//!
//! Internally everything is nanoseconds; human-facing output converts to
//! milliseconds at the edges. Percentiles use the nearest-rank convention,
//! which is recorded in report metadata.

mod percentile;

use std::collections::BTreeMap;

use ebf_core::component::QualityAttr;
use ebf_core::time::Ns;
use ebf_core::trace::{RequestTrace, Span, TraceSink};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use percentile::{LogHistogram, SampleStore, percentile};

/// Percentile convention used throughout, recorded in report metadata.
pub const PERCENTILE_METHOD: &str = "nearest-rank";

/// Default cap on exactly-retained samples before spilling to the histogram.
pub const DEFAULT_SAMPLE_CAP: usize = 2_000_000;

/// Default tolerance for quality-ensured checks: achieved quality may deviate
/// from the target by at most 2%.
pub const DEFAULT_QUALITY_TOLERANCE: f64 = 0.02;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("no samples to aggregate")]
    EmptySamples,
    #[error("percentile must lie in (0, 100], got {0}")]
    InvalidPercentile(f64),
    #[error("node '{0}' does not appear in any trace")]
    NodeNotFound(String),
    #[error("node '{0}' has a zero p99; amplification is undefined")]
    ZeroComponentTail(String),
    #[error("no trace carries an achieved-quality value")]
    MissingQualityData,
    #[error("sweep is empty")]
    EmptySweep,
}

/// Aggregation level for breakdowns: module rows group the stations under one
/// module label; component rows are individual stations.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Module,
    Component,
}

/// Count, mean, and the standard percentile ladder for one distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: u64,
    pub mean_ns: f64,
    pub p50_ns: Ns,
    pub p90_ns: Ns,
    pub p99_ns: Ns,
    pub p999_ns: Ns,
    /// Extra percentiles requested in config, as (percentile, value) pairs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<(f64, Ns)>,
}

impl LatencySummary {
    fn from_store(store: &SampleStore, extra: &[f64]) -> Result<Self, AnalyticsError> {
        Ok(LatencySummary {
            count: store.len(),
            mean_ns: store.mean_ns().ok_or(AnalyticsError::EmptySamples)?,
            p50_ns: store.percentile(50.0)?,
            p90_ns: store.percentile(90.0)?,
            p99_ns: store.percentile(99.0)?,
            p999_ns: store.percentile(99.9)?,
            extra: extra
                .iter()
                .map(|&p| Ok((p, store.percentile(p)?)))
                .collect::<Result<Vec<_>, AnalyticsError>>()?,
        })
    }
}

/// One row of a latency breakdown. Residence (end − enqueue) is what a caller
/// of the node observes; the pure-service column (end − start) is alongside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub name: String,
    pub count: u64,
    pub mean_ns: f64,
    pub p90_ns: Ns,
    pub p99_ns: Ns,
    pub share_of_e2e_mean: f64,
    pub service_mean_ns: f64,
}

/// Full per-run latency report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub count: u64,
    /// Latency measured from intended send (arrival), immune to coordinated
    /// omission.
    pub e2e: LatencySummary,
    /// Latency measured from actual send, shown alongside for comparison.
    pub from_send: LatencySummary,
    pub breakdown_module: Vec<BreakdownRow>,
    pub breakdown_component: Vec<BreakdownRow>,
    pub amplification_module: BTreeMap<String, f64>,
    pub amplification_component: BTreeMap<String, f64>,
    pub error_count: u64,
    pub timeout_count: u64,
    pub warmup_discarded: u64,
}

#[derive(Clone, Debug)]
struct NodeSamples {
    residence: SampleStore,
    service: SampleStore,
}

impl NodeSamples {
    fn with_cap(cap: usize) -> Self {
        NodeSamples {
            residence: SampleStore::with_cap(cap),
            service: SampleStore::with_cap(cap),
        }
    }
}

/// Streaming trace consumer: accumulates end-to-end samples plus per-module
/// and per-component span samples without retaining whole traces.
pub struct TraceAccumulator {
    cap: usize,
    extra_percentiles: Vec<f64>,
    count: u64,
    e2e: SampleStore,
    from_send: SampleStore,
    modules: BTreeMap<String, NodeSamples>,
    components: BTreeMap<String, NodeSamples>,
    quality_sum: f64,
    quality_count: u64,
}

impl TraceAccumulator {
    pub fn new() -> Self {
        Self::with_options(DEFAULT_SAMPLE_CAP, &[])
    }

    pub fn with_options(cap: usize, extra_percentiles: &[f64]) -> Self {
        TraceAccumulator {
            cap,
            extra_percentiles: extra_percentiles.to_vec(),
            count: 0,
            e2e: SampleStore::with_cap(cap),
            from_send: SampleStore::with_cap(cap),
            modules: BTreeMap::new(),
            components: BTreeMap::new(),
            quality_sum: 0.0,
            quality_count: 0,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn e2e(&self) -> &SampleStore {
        &self.e2e
    }

    pub fn record(&mut self, trace: &RequestTrace) {
        self.count += 1;
        self.e2e
            .push(trace.completion_ns.saturating_sub(trace.arrival_ns));
        self.from_send
            .push(trace.completion_ns.saturating_sub(trace.root_span.start_ns));
        if let Some(q) = trace.quality_achieved {
            self.quality_sum += q;
            self.quality_count += 1;
        }
        let cap = self.cap;
        for child in &trace.root_span.children {
            let entry = self
                .modules
                .entry(child.component_id.to_string())
                .or_insert_with(|| NodeSamples::with_cap(cap));
            entry.residence.push(child.residence_ns());
            entry.service.push(child.service_ns());
            record_leaves(child, &mut self.components, cap);
        }
    }

    pub fn mean_quality(&self) -> Option<f64> {
        (self.quality_count > 0).then(|| self.quality_sum / self.quality_count as f64)
    }

    fn rows(
        map: &BTreeMap<String, NodeSamples>,
        e2e_mean: f64,
    ) -> Result<Vec<BreakdownRow>, AnalyticsError> {
        let mut rows = Vec::with_capacity(map.len());
        for (name, samples) in map {
            rows.push(BreakdownRow {
                name: name.clone(),
                count: samples.residence.len(),
                mean_ns: samples
                    .residence
                    .mean_ns()
                    .ok_or(AnalyticsError::EmptySamples)?,
                p90_ns: samples.residence.percentile(90.0)?,
                p99_ns: samples.residence.percentile(99.0)?,
                share_of_e2e_mean: samples.residence.mean_ns().unwrap_or(0.0) / e2e_mean,
                service_mean_ns: samples.service.mean_ns().unwrap_or(0.0),
            });
        }
        // Heaviest stage first; ties resolve by name for determinism.
        rows.sort_by(|a, b| {
            b.mean_ns
                .partial_cmp(&a.mean_ns)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.name.cmp(&b.name))
        });
        Ok(rows)
    }

    fn amplification_of(map: &BTreeMap<String, NodeSamples>, e2e_p99: Ns) -> BTreeMap<String, f64> {
        map.iter()
            .filter_map(|(name, samples)| {
                let p99 = samples.residence.percentile(99.0).ok()?;
                (p99 > 0).then(|| (name.clone(), e2e_p99 as f64 / p99 as f64))
            })
            .collect()
    }

    /// Tail amplification for one node: e2e p99 over the node's p99.
    pub fn amplification(&self, node_id: &str) -> Result<f64, AnalyticsError> {
        let samples = self
            .components
            .get(node_id)
            .or_else(|| self.modules.get(node_id))
            .ok_or_else(|| AnalyticsError::NodeNotFound(node_id.to_string()))?;
        let node_p99 = samples.residence.percentile(99.0)?;
        if node_p99 == 0 {
            return Err(AnalyticsError::ZeroComponentTail(node_id.to_string()));
        }
        Ok(self.e2e.percentile(99.0)? as f64 / node_p99 as f64)
    }

    pub fn finish(&self, counters: RunCounters) -> Result<LatencyReport, AnalyticsError> {
        let e2e = LatencySummary::from_store(&self.e2e, &self.extra_percentiles)?;
        Ok(LatencyReport {
            count: self.count,
            breakdown_module: Self::rows(&self.modules, e2e.mean_ns)?,
            breakdown_component: Self::rows(&self.components, e2e.mean_ns)?,
            amplification_module: Self::amplification_of(&self.modules, e2e.p99_ns),
            amplification_component: Self::amplification_of(&self.components, e2e.p99_ns),
            from_send: LatencySummary::from_store(&self.from_send, &self.extra_percentiles)?,
            e2e,
            error_count: counters.errors,
            timeout_count: counters.timeouts,
            warmup_discarded: counters.warmup_discarded,
        })
    }
}

impl Default for TraceAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl TraceSink for TraceAccumulator {
    fn accept(&mut self, trace: RequestTrace) {
        self.record(&trace);
    }
}

fn record_leaves(span: &Span, map: &mut BTreeMap<String, NodeSamples>, cap: usize) {
    if span.children.is_empty() {
        let entry = map
            .entry(span.component_id.to_string())
            .or_insert_with(|| NodeSamples::with_cap(cap));
        entry.residence.push(span.residence_ns());
        entry.service.push(span.service_ns());
        return;
    }
    for child in &span.children {
        record_leaves(child, map, cap);
    }
}

/// Counters carried into the report from the run itself.
#[derive(Copy, Clone, Debug, Default)]
pub struct RunCounters {
    pub errors: u64,
    pub timeouts: u64,
    pub warmup_discarded: u64,
}

/// Per-node latency rows over a trace set.
pub fn breakdown(
    traces: &[RequestTrace],
    level: Level,
) -> Result<Vec<BreakdownRow>, AnalyticsError> {
    let mut acc = TraceAccumulator::new();
    for t in traces {
        acc.record(t);
    }
    let e2e_mean = acc.e2e.mean_ns().ok_or(AnalyticsError::EmptySamples)?;
    match level {
        Level::Module => TraceAccumulator::rows(&acc.modules, e2e_mean),
        Level::Component => TraceAccumulator::rows(&acc.components, e2e_mean),
    }
}

/// Tail amplification of one node over a trace set.
pub fn amplification(traces: &[RequestTrace], node_id: &str) -> Result<f64, AnalyticsError> {
    let mut acc = TraceAccumulator::new();
    for t in traces {
        acc.record(t);
    }
    acc.amplification(node_id)
}

/// Outcome of a quality-ensured check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityOutcome {
    pub metric: String,
    pub target: f64,
    pub tolerance: f64,
    pub achieved: f64,
    /// Lowest achieved value still counted as meeting the target.
    pub boundary: f64,
    pub pass: bool,
    /// Latency stats over the quality-carrying traces; present only on pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<LatencySummary>,
}

/// Passes when the mean achieved quality is at least `target × (1 − tolerance)`;
/// latency stats are reported only for passing runs.
pub fn quality_ensured(
    traces: &[RequestTrace],
    attr: &QualityAttr,
    tolerance: f64,
) -> Result<QualityOutcome, AnalyticsError> {
    let mut sum = 0.0;
    let mut store = SampleStore::with_cap(DEFAULT_SAMPLE_CAP);
    for t in traces {
        if let Some(q) = t.quality_achieved {
            sum += q;
            store.push(t.completion_ns.saturating_sub(t.arrival_ns));
        }
    }
    if store.is_empty() {
        return Err(AnalyticsError::MissingQualityData);
    }
    let achieved = sum / store.len() as f64;
    let boundary = attr.target * (1.0 - tolerance);
    let pass = achieved >= boundary;
    Ok(QualityOutcome {
        metric: attr.metric.clone(),
        target: attr.target,
        tolerance,
        achieved,
        boundary,
        pass,
        stats: pass
            .then(|| LatencySummary::from_store(&store, &[]))
            .transpose()?,
    })
}

/// Largest offered rate whose measured p99 stays within the bound; `None`
/// when even the smallest rate violates it.
pub fn latency_bounded_throughput(
    sweep: &[(f64, Ns)],
    bound_ns: Ns,
) -> Result<Option<f64>, AnalyticsError> {
    if sweep.is_empty() {
        return Err(AnalyticsError::EmptySweep);
    }
    Ok(sweep
        .iter()
        .filter(|&&(_, p99)| p99 <= bound_ns)
        .map(|&(rate, _)| rate)
        .fold(None, |best: Option<f64>, rate| {
            Some(best.map_or(rate, |b| b.max(rate)))
        }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ebf_core::component::RequestClass;
    use ebf_core::time::NS_PER_MS;

    fn leaf(id: &str, enqueue_ms: u64, start_ms: u64, end_ms: u64) -> Span {
        Span::leaf(
            id.into(),
            enqueue_ms * NS_PER_MS,
            start_ms * NS_PER_MS,
            end_ms * NS_PER_MS,
        )
    }

    fn trace(
        id: u64,
        children: Vec<Span>,
        completion_ms: u64,
        quality: Option<f64>,
    ) -> RequestTrace {
        RequestTrace {
            request_id: id,
            class: RequestClass::Text,
            arrival_ns: 0,
            completion_ns: completion_ms * NS_PER_MS,
            root_span: Span {
                component_id: "root".into(),
                enqueue_ns: 0,
                start_ns: 0,
                end_ns: completion_ms * NS_PER_MS,
                children,
            },
            quality_achieved: quality,
        }
    }

    #[test]
    fn single_node_share_is_one_and_amplification_is_one() {
        let traces: Vec<RequestTrace> = (0..50)
            .map(|i| trace(i, vec![leaf("only", 0, 0, 10 + i % 7)], 10 + i % 7, None))
            .collect();
        let rows = breakdown(&traces, Level::Component).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].share_of_e2e_mean - 1.0).abs() < 1e-12);
        assert_eq!(amplification(&traces, "only").unwrap(), 1.0);
    }

    #[test]
    fn module_rows_group_station_rows() {
        // Module "stage" wraps a and b; c stands alone.
        let traces: Vec<RequestTrace> = (0..10)
            .map(|i| {
                let module = Span {
                    component_id: "stage".into(),
                    enqueue_ns: 0,
                    start_ns: 0,
                    end_ns: 20 * NS_PER_MS,
                    children: vec![leaf("a", 0, 0, 8), leaf("b", 8, 8, 20)],
                };
                trace(i, vec![module, leaf("c", 20, 20, 26)], 26, None)
            })
            .collect();
        let modules = breakdown(&traces, Level::Module).unwrap();
        let names: Vec<_> = modules.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["stage", "c"]);
        let components = breakdown(&traces, Level::Component).unwrap();
        let names: Vec<_> = components.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["b", "a", "c"]);
        // Sequential stages cover the whole request: shares sum to 1.
        let share_sum: f64 = modules.iter().map(|r| r.share_of_e2e_mean).sum();
        assert!((share_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn amplification_for_fast_stage_in_heavy_tailed_pipeline() {
        // Deterministic 1 ms stage followed by a stage that spikes: the fast
        // stage's ratio is e2e_p99 / 1 ms, computed directly.
        let traces: Vec<RequestTrace> = (0..100)
            .map(|i| {
                let slow_ms = if i >= 98 { 200 } else { 10 };
                trace(
                    i,
                    vec![leaf("fast", 0, 0, 1), leaf("slow", 1, 1, 1 + slow_ms)],
                    1 + slow_ms,
                    None,
                )
            })
            .collect();
        // Nearest rank: the 99th smallest of 100 samples is the first spike.
        let e2e_p99 = 201 * NS_PER_MS;
        let ratio = amplification(&traces, "fast").unwrap();
        assert!((ratio - e2e_p99 as f64 / NS_PER_MS as f64).abs() < 1e-9);
    }

    #[test]
    fn amplification_errors_name_the_node() {
        let traces = vec![trace(0, vec![leaf("a", 0, 0, 5)], 5, None)];
        assert_eq!(
            amplification(&traces, "ghost"),
            Err(AnalyticsError::NodeNotFound("ghost".into()))
        );
        let zero = vec![trace(0, vec![leaf("a", 0, 0, 0)], 5, None)];
        assert_eq!(
            amplification(&zero, "a"),
            Err(AnalyticsError::ZeroComponentTail("a".into()))
        );
    }

    #[test]
    fn quality_boundary_cases() {
        let attr = QualityAttr {
            metric: "precision".into(),
            target: 0.930,
        };
        // 0.930 × 0.98 = 0.9114: exactly on the boundary passes.
        let pass = quality_ensured(&[trace(0, vec![], 5, Some(0.9114))], &attr, 0.02).unwrap();
        assert!(pass.pass);
        assert!(pass.stats.is_some());
        let fail = quality_ensured(&[trace(0, vec![], 5, Some(0.90))], &attr, 0.02).unwrap();
        assert!(!fail.pass);
        assert!(fail.stats.is_none());
        let exact = quality_ensured(&[trace(0, vec![], 5, Some(0.930))], &attr, 0.02).unwrap();
        assert!(exact.pass);
        assert_eq!(
            quality_ensured(&[trace(0, vec![], 5, None)], &attr, 0.02),
            Err(AnalyticsError::MissingQualityData)
        );
    }

    #[test]
    fn bounded_throughput_scans_the_sweep() {
        let ms = NS_PER_MS;
        let sweep = [(10.0, 50 * ms), (20.0, 120 * ms)];
        assert_eq!(
            latency_bounded_throughput(&sweep, 100 * ms).unwrap(),
            Some(10.0)
        );
        assert_eq!(
            latency_bounded_throughput(&sweep, 200 * ms).unwrap(),
            Some(20.0)
        );
        assert_eq!(latency_bounded_throughput(&sweep, 10 * ms).unwrap(), None);
        assert_eq!(
            latency_bounded_throughput(&[], 10 * ms),
            Err(AnalyticsError::EmptySweep)
        );
    }

    #[test]
    fn report_assembles_both_latency_bases() {
        let mut acc = TraceAccumulator::new();
        for i in 0..100u64 {
            let mut t = trace(i, vec![leaf("a", 0, 0, 10)], 10, None);
            // Actual send lagged the intended send by 2 ms.
            t.root_span.start_ns = 2 * NS_PER_MS;
            acc.accept(t);
        }
        let report = acc
            .finish(RunCounters {
                errors: 3,
                timeouts: 1,
                warmup_discarded: 7,
            })
            .unwrap();
        assert_eq!(report.count, 100);
        assert_eq!(report.e2e.p50_ns, 10 * NS_PER_MS);
        assert_eq!(report.from_send.p50_ns, 8 * NS_PER_MS);
        assert_eq!(report.error_count, 3);
        assert_eq!(report.warmup_discarded, 7);
        assert!(report.e2e.p50_ns <= report.e2e.p90_ns && report.e2e.p90_ns <= report.e2e.p99_ns);
    }
}
