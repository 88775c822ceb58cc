//! Run accounting: conservation counters, per-station utilization, the
//! jobs-in-system integral behind the Little's-law check, and stability
//! warnings.

use ebf_core::time::{Ns, secs_from_ns};
use ebf_core::trace::{RequestTrace, TraceSink};
use serde::{Deserialize, Serialize};

/// Threshold above which a station's observed utilization triggers a
/// (non-fatal) instability warning.
pub const UNSTABLE_UTILIZATION: f64 = 0.98;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationStats {
    pub id: String,
    pub servers: u32,
    pub jobs_started: u64,
    /// Busy-server time over the measured window, normalized by capacity.
    pub utilization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub injected: u64,
    pub completed_measured: u64,
    pub discarded_warmup: u64,
    pub in_flight_at_end: u64,
    pub quota_shortfalls: u64,
    pub training_runs: u64,
    pub horizon_ns: Ns,
    pub warmup_ns: Ns,
    /// Measured completions per second of measured window.
    pub lambda_measured_per_sec: f64,
    pub mean_e2e_measured_ns: f64,
    /// Time-averaged number of requests in the system over the measured
    /// window.
    pub time_avg_jobs: f64,
    pub stations: Vec<StationStats>,
    pub warnings: Vec<String>,
}

impl RunStats {
    /// Conservation: every injected request either completed (measured or
    /// inside warm-up) or was still in flight when the run ended.
    pub fn conserved(&self) -> bool {
        self.injected == self.completed_measured + self.discarded_warmup + self.in_flight_at_end
    }

    /// Little's law: mean jobs in system over arrival rate times mean time in
    /// system. Approaches 1 for stable runs.
    pub fn little_law_ratio(&self) -> Option<f64> {
        if self.completed_measured == 0 || self.mean_e2e_measured_ns <= 0.0 {
            return None;
        }
        let expected = self.lambda_measured_per_sec * self.mean_e2e_measured_ns / 1e9;
        (expected > 0.0).then(|| self.time_avg_jobs / expected)
    }

    pub fn measured_window_secs(&self) -> f64 {
        secs_from_ns(self.horizon_ns.saturating_sub(self.warmup_ns))
    }
}

/// Sink adapter that forwards only post-warm-up traces, so statistics never
/// see warm-up arrivals.
pub struct WarmupFilter<S: TraceSink> {
    warmup_ns: Ns,
    pub inner: S,
}

impl<S: TraceSink> WarmupFilter<S> {
    pub fn new(warmup_ns: Ns, inner: S) -> Self {
        WarmupFilter { warmup_ns, inner }
    }
}

impl<S: TraceSink> TraceSink for WarmupFilter<S> {
    fn accept(&mut self, trace: RequestTrace) {
        if trace.arrival_ns >= self.warmup_ns {
            self.inner.accept(trace);
        }
    }
}
