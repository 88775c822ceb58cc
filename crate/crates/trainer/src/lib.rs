//! Offline model-update scheduling.
//!
//! An update policy describes how often a served model is refreshed (hourly
//! batch runs or streaming-like updates every few seconds) and what extra
//! training time buys in accuracy. The gain curve is anchored at the origin
//! and linearly interpolated between measured points; extrapolation past the
//! last point is refused rather than invented.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nanoseconds, matching the harness-wide time base.
pub type Ns = u64;

#[derive(Debug, Error, PartialEq)]
pub enum TrainerError {
    #[error("gain curve is invalid: {0}")]
    InvalidCurve(String),
    #[error(
        "overhead fraction {fraction} is outside the measured curve (max {max}); refusing to extrapolate"
    )]
    OutOfCurveRange { fraction: f64, max: f64 },
    #[error("no feasible candidate intervals")]
    NoCandidates,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Model retrained on an interval of hours.
    Batch,
    /// Streaming-like refresh every few seconds.
    Streaming,
}

/// Update policy: mode, the measured (extra-training-time fraction, accuracy
/// gain) curve, and the accuracy the base model starts from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdatePolicy {
    pub mode: UpdateMode,
    pub interval_ns: Ns,
    /// Ordered (overhead fraction, accuracy gain) points, strictly increasing
    /// in fraction with non-decreasing, non-negative gains.
    pub curve: Vec<(f64, f64)>,
    pub base_accuracy: f64,
}

impl UpdatePolicy {
    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.curve.is_empty() {
            return Err(TrainerError::InvalidCurve("curve has no points".into()));
        }
        let mut prev = (0.0f64, 0.0f64);
        for &(fraction, gain) in &self.curve {
            if !(fraction.is_finite() && fraction > prev.0) {
                return Err(TrainerError::InvalidCurve(format!(
                    "fractions must be strictly increasing and positive, got {fraction} after {}",
                    prev.0
                )));
            }
            if !(gain.is_finite() && gain >= prev.1) {
                return Err(TrainerError::InvalidCurve(format!(
                    "gains must be non-negative and non-decreasing, got {gain} after {}",
                    prev.1
                )));
            }
            prev = (fraction, gain);
        }
        if !(0.0..=1.0).contains(&self.base_accuracy) {
            return Err(TrainerError::InvalidCurve(format!(
                "base accuracy must lie in [0, 1], got {}",
                self.base_accuracy
            )));
        }
        Ok(())
    }

    pub fn max_fraction(&self) -> f64 {
        self.curve.last().map(|&(f, _)| f).unwrap_or(0.0)
    }
}

/// Piecewise-linear accuracy gain at the given extra-training-time fraction,
/// through the origin and the policy's measured points. Queries beyond the
/// last measured point are refused.
pub fn interpolate_gain(policy: &UpdatePolicy, fraction: f64) -> Result<f64, TrainerError> {
    policy.validate()?;
    if !(fraction.is_finite() && fraction >= 0.0) || fraction > policy.max_fraction() {
        return Err(TrainerError::OutOfCurveRange {
            fraction,
            max: policy.max_fraction(),
        });
    }
    let mut lo = (0.0f64, 0.0f64);
    for &(f, g) in &policy.curve {
        if fraction <= f {
            let t = (fraction - lo.0) / (f - lo.0);
            return Ok(lo.1 + t * (g - lo.1));
        }
        lo = (f, g);
    }
    Ok(lo.1)
}

/// Evaluation of one candidate interval over a horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRecord {
    pub interval_ns: Ns,
    pub updates: u64,
    pub cost_ns: Ns,
    pub overhead_fraction: f64,
    pub accuracy_gain: f64,
    pub objective: f64,
    /// False when the interval never fires within the horizon, exceeds a
    /// declared cap, or implies an overhead beyond the measured curve.
    pub feasible: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalParams {
    pub horizon_ns: Ns,
    pub per_update_cost_ns: Ns,
    /// Weight of the overhead term in `objective = gain − weight · overhead`.
    pub objective_weight: f64,
    /// Hard cap on the interval (e.g. "the model must refresh at least
    /// hourly"); longer candidates are infeasible.
    pub max_interval_ns: Option<Ns>,
}

/// Scores every candidate interval: `updates = ⌊horizon/interval⌋`,
/// `cost = updates × per_update_cost`, gain interpolated at `cost/horizon`.
pub fn evaluate_policy(
    policy: &UpdatePolicy,
    candidates: &[Ns],
    params: &EvalParams,
) -> Result<Vec<TradeoffRecord>, TrainerError> {
    policy.validate()?;
    if candidates.is_empty() {
        return Err(TrainerError::NoCandidates);
    }
    let mut records = Vec::with_capacity(candidates.len());
    for &interval_ns in candidates {
        let updates = params.horizon_ns.checked_div(interval_ns).unwrap_or(0);
        let cost_ns = updates * params.per_update_cost_ns;
        let overhead_fraction = cost_ns as f64 / params.horizon_ns as f64;
        let capped = params.max_interval_ns.is_some_and(|max| interval_ns > max);
        let gain = if capped || updates == 0 {
            None
        } else {
            interpolate_gain(policy, overhead_fraction).ok()
        };
        let feasible = gain.is_some();
        let accuracy_gain = gain.unwrap_or(0.0);
        records.push(TradeoffRecord {
            interval_ns,
            updates,
            cost_ns,
            overhead_fraction,
            accuracy_gain,
            objective: accuracy_gain - params.objective_weight * overhead_fraction,
            feasible,
        });
    }
    Ok(records)
}

/// Picks the feasible record with the maximal objective; ties break toward
/// the longer (cheaper) interval.
pub fn choose_interval(records: &[TradeoffRecord]) -> Result<Ns, TrainerError> {
    records
        .iter()
        .filter(|r| r.feasible)
        .max_by(|a, b| {
            a.objective
                .partial_cmp(&b.objective)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.interval_ns.cmp(&b.interval_ns))
        })
        .map(|r| r.interval_ns)
        .ok_or(TrainerError::NoCandidates)
}
