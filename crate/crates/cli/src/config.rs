//! Run configuration: one self-contained, hand-editable TOML file per run.
//! Unknown keys are errors, not warnings, and the file's content digest is
//! embedded in every report for provenance.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use ebf_core::component::{
    ComponentKind, ComponentSpec, Discipline, QualityAttr, ServiceTimeModel,
};
use ebf_core::hash::fnv64_hex;
use ebf_core::time::{NS_PER_SEC, Ns, ns_from_secs_f64};
use ebf_core::topology::{RawTopology, Topology, TopologyError, validate_topology};
use ebf_kernels::KernelSpec;
use ebf_netbench::WorkMode;
use ebf_simengine::TrainingLoad;
use ebf_trainer::{UpdateMode, UpdatePolicy};
use ebf_workload::{LoopMode, StopRule, WorkloadSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planexpr::parse_plan;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key at {path}: {msg}")]
    UnknownKey { path: String, msg: String },
    #[error("constraint violated at {path}: {reason}")]
    Constraint { path: String, reason: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn constraint(path: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Constraint {
        path: path.to_string(),
        reason: reason.into(),
    }
}

/// Parses durations written with a unit suffix: `250ns`, `10us`, `5ms`,
/// `1.5s`, `2m`, `1h`.
pub fn parse_duration(text: &str, path: &str) -> Result<Ns, ConfigError> {
    let text = text.trim();
    let split = text
        .char_indices()
        .find(|(_, c)| c.is_ascii_alphabetic())
        .map(|(i, _)| i)
        .ok_or_else(|| constraint(path, format!("duration '{text}' is missing a unit suffix")))?;
    let (num, unit) = text.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|e| constraint(path, format!("bad duration '{text}': {e}")))?;
    if !(value.is_finite() && value >= 0.0) {
        return Err(constraint(
            path,
            format!("duration '{text}' must be non-negative"),
        ));
    }
    let secs = match unit {
        "ns" => value / 1e9,
        "us" => value / 1e6,
        "ms" => value / 1e3,
        "s" => value,
        "m" | "min" => value * 60.0,
        "h" => value * 3600.0,
        other => return Err(constraint(path, format!("unknown duration unit '{other}'"))),
    };
    Ok(ns_from_secs_f64(secs))
}

// ---------------------------------------------------------------------------
// On-disk schema. Every table denies unknown keys.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub mode: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyCfg>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub component: BTreeMap<String, ComponentCfg>,
    /// Named sub-plans referenced from plan expressions.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub plans: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytics: Option<AnalyticsCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PredictionCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<TrainerCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkCfg>,
    #[serde(default, rename = "assert", skip_serializing_if = "Option::is_none")]
    pub asserts: Option<AssertCfg>,
}

/// Descriptive scenario metadata (echoed into reports, not interpreted).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioCfg {
    pub name: String,
    #[serde(default)]
    pub metrics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_update_frequency: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadCfg {
    #[serde(rename = "loop")]
    pub loop_mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_per_sec: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub think_time_mean: Option<String>,
    pub fraction_text: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<String>,
    pub stop: StopCfg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopCfg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyCfg {
    pub entry: String,
    pub plan: String,
    /// Reserved extension point; must be zero in v1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_delay: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentCfg {
    pub kind: String,
    pub servers: u32,
    pub service: ServiceCfg,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityAttrCfg>,
    /// Network mode: run this kernel as the per-request work instead of a
    /// sleep or spin of the sampled duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelWorkCfg>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceCfg {
    pub dist: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_per_sec: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p99: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_time: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityAttrCfg {
    pub metric: String,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelWorkCfg {
    pub name: String,
    pub shape: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticsCfg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram_cap: Option<usize>,
    #[serde(default)]
    pub extra_percentiles: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionCfg {
    pub mu_per_sec: f64,
    pub lambdas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percentile: Option<f64>,
    /// Adds an Erlang-C M/M/k mean alongside the M/M/1 numbers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub servers: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCfg {
    pub lambdas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p99_bound: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerCfg {
    pub mode: String,
    pub interval: String,
    pub per_update_cost: String,
    pub base_accuracy: f64,
    /// (extra training-time fraction, accuracy gain) measurements.
    pub curve: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_weight: Option<f64>,
    #[serde(default)]
    pub candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_interval: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<String>,
    /// Station whose capacity batch updates consume during simulated runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityCfg {
    pub metric: String,
    pub target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCfg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_timeout: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_bytes: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub addresses: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssertCfg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p99_max: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_max: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_pass: Option<bool>,
}

// ---------------------------------------------------------------------------
// The validated, ready-to-run form.
// ---------------------------------------------------------------------------

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    Network,
}

#[derive(Clone, Debug)]
pub struct PredictionPlan {
    pub mu_per_sec: f64,
    pub lambdas: Vec<f64>,
    pub percentile: f64,
    pub servers: Option<u32>,
}

#[derive(Clone, Debug)]
pub struct TrainerPlan {
    pub policy: UpdatePolicy,
    pub candidates: Vec<Ns>,
    pub per_update_cost_ns: Ns,
    pub objective_weight: f64,
    pub max_interval_ns: Option<Ns>,
    pub horizon_ns: Ns,
    pub station: Option<String>,
}

impl TrainerPlan {
    pub fn training_load(&self) -> Option<TrainingLoad> {
        self.station.as_ref().map(|station| TrainingLoad {
            station: station.clone(),
            interval_ns: self.policy.interval_ns,
            cost_ns: self.per_update_cost_ns,
        })
    }
}

#[derive(Clone, Debug)]
pub struct QualityPlan {
    pub attr: QualityAttr,
    pub achieved: Option<f64>,
    pub tolerance: f64,
}

#[derive(Clone, Debug)]
pub struct NetworkPlan {
    pub addresses: BTreeMap<String, SocketAddr>,
    pub work: WorkMode,
    pub component_kernels: BTreeMap<String, KernelSpec>,
    pub request_timeout: Duration,
    pub payload_bytes: usize,
}

#[derive(Clone, Debug)]
pub struct AssertPlan {
    pub p99_max_ns: Option<Ns>,
    pub mean_max_ns: Option<Ns>,
    pub quality_pass: Option<bool>,
}

#[derive(Debug)]
pub struct ParsedConfig {
    pub file: RunConfigFile,
    pub config_hash: String,
    pub mode: Mode,
    pub seed: u64,
    pub topology: Option<Arc<Topology>>,
    pub workload: Option<WorkloadSpec>,
    pub sweep: Vec<f64>,
    pub p99_bound_ns: Option<Ns>,
    pub histogram_cap: usize,
    pub extra_percentiles: Vec<f64>,
    pub prediction: Option<PredictionPlan>,
    pub trainer: Option<TrainerPlan>,
    pub quality: Option<QualityPlan>,
    pub network: Option<NetworkPlan>,
    pub asserts: Option<AssertPlan>,
}

/// Parses and fully validates a config. `base_dir` anchors relative paths
/// (empirical sample files).
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ParsedConfig, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| map_toml_error(text, e))?;
    let file: RunConfigFile =
        serde_path_to_error::deserialize(de).map_err(|e| map_path_error(text, e))?;
    build(file, text, base_dir)
}

fn line_of(text: &str, byte_offset: usize) -> usize {
    1 + text[..byte_offset.min(text.len())].matches('\n').count()
}

fn map_toml_error(text: &str, e: toml::de::Error) -> ConfigError {
    ConfigError::Syntax {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        msg: e.message().to_string(),
    }
}

fn map_path_error(text: &str, e: serde_path_to_error::Error<toml::de::Error>) -> ConfigError {
    let path = e.path().to_string();
    let msg = e.inner().message().to_string();
    let line = e.inner().span().map(|s| line_of(text, s.start));
    if msg.contains("unknown field") || msg.contains("unknown variant") {
        ConfigError::UnknownKey { path, msg }
    } else if path == "." || path.is_empty() {
        ConfigError::Syntax {
            line: line.unwrap_or(1),
            msg,
        }
    } else {
        ConfigError::Constraint { path, reason: msg }
    }
}

fn build(file: RunConfigFile, text: &str, base_dir: &Path) -> Result<ParsedConfig, ConfigError> {
    let mode = match file.mode.as_str() {
        "simulate" => Mode::Simulate,
        "network" => Mode::Network,
        other => {
            return Err(constraint(
                "mode",
                format!("expected 'simulate' or 'network', got '{other}'"),
            ));
        }
    };

    let seed = match std::env::var("EBF_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map_err(|e| constraint("EBF_SEED", format!("bad seed override '{v}': {e}")))?,
        Err(_) => file.seed,
    };

    let topology = match &file.topology {
        None => None,
        Some(t) => Some(Arc::new(build_topology(t, &file, base_dir)?)),
    };

    let workload = match &file.workload {
        None => None,
        Some(w) => Some(build_workload(w, seed)?),
    };

    let sweep = match &file.sweep {
        None => Vec::new(),
        Some(s) => {
            if s.lambdas.is_empty() {
                return Err(constraint("sweep.lambdas", "sweep needs at least one rate"));
            }
            if s.lambdas.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
                return Err(constraint("sweep.lambdas", "sweep rates must be positive"));
            }
            if s.lambdas.windows(2).any(|p| p[0] >= p[1]) {
                return Err(constraint(
                    "sweep.lambdas",
                    "sweep rates must be strictly increasing",
                ));
            }
            s.lambdas.clone()
        }
    };
    let p99_bound_ns = file
        .sweep
        .as_ref()
        .and_then(|s| s.p99_bound.as_ref())
        .map(|d| parse_duration(d, "sweep.p99_bound"))
        .transpose()?;

    if !sweep.is_empty() {
        match &workload {
            Some(w) if matches!(w.mode, LoopMode::Open { .. }) => {}
            Some(_) => {
                return Err(constraint(
                    "sweep",
                    "rate sweeps require an open-loop workload",
                ));
            }
            None => return Err(constraint("sweep", "a sweep needs a workload section")),
        }
    }

    let prediction = match &file.prediction {
        None => None,
        Some(p) => {
            if !(p.mu_per_sec.is_finite() && p.mu_per_sec > 0.0) {
                return Err(constraint(
                    "prediction.mu_per_sec",
                    "service rate must be positive",
                ));
            }
            let percentile = p.percentile.unwrap_or(99.0);
            if !(0.0 < percentile && percentile < 100.0) {
                return Err(constraint(
                    "prediction.percentile",
                    "percentile must lie strictly between 0 and 100",
                ));
            }
            Some(PredictionPlan {
                mu_per_sec: p.mu_per_sec,
                lambdas: p.lambdas.clone(),
                percentile,
                servers: p.servers,
            })
        }
    };

    if workload.is_none() && prediction.is_none() {
        return Err(constraint(
            "mode",
            "config drives nothing: add a [workload] (with [topology]) or a [prediction] section",
        ));
    }
    if workload.is_some() && topology.is_none() {
        return Err(constraint(
            "topology",
            "a workload needs a [topology] to run against",
        ));
    }

    let trainer = file
        .trainer
        .as_ref()
        .map(|t| build_trainer(t, &file))
        .transpose()?;
    let quality = file
        .quality
        .as_ref()
        .map(|q| -> Result<QualityPlan, ConfigError> {
            if !(q.target > 0.0 && q.target <= 1.0) {
                return Err(constraint("quality.target", "target must lie in (0, 1]"));
            }
            // Fall back to the trainer-derived accuracy when no explicit
            // achieved value is configured.
            let achieved = q.achieved;
            Ok(QualityPlan {
                attr: QualityAttr {
                    metric: q.metric.clone(),
                    target: q.target,
                },
                achieved,
                tolerance: q
                    .tolerance
                    .unwrap_or(ebf_analytics::DEFAULT_QUALITY_TOLERANCE),
            })
        })
        .transpose()?;

    let network = match (&file.network, mode) {
        (Some(n), _) => Some(build_network(n, &file)?),
        (None, Mode::Network) => {
            return Err(constraint(
                "network",
                "network mode needs a [network] section",
            ));
        }
        (None, Mode::Simulate) => None,
    };

    let asserts = file
        .asserts
        .as_ref()
        .map(|a| -> Result<AssertPlan, ConfigError> {
            Ok(AssertPlan {
                p99_max_ns: a
                    .p99_max
                    .as_ref()
                    .map(|d| parse_duration(d, "assert.p99_max"))
                    .transpose()?,
                mean_max_ns: a
                    .mean_max
                    .as_ref()
                    .map(|d| parse_duration(d, "assert.mean_max"))
                    .transpose()?,
                quality_pass: a.quality_pass,
            })
        })
        .transpose()?;

    let (histogram_cap, extra_percentiles) = match &file.analytics {
        None => (ebf_analytics::DEFAULT_SAMPLE_CAP, Vec::new()),
        Some(a) => {
            for &p in &a.extra_percentiles {
                if !(p > 0.0 && p <= 100.0) {
                    return Err(constraint(
                        "analytics.extra_percentiles",
                        format!("percentile {p} out of (0, 100]"),
                    ));
                }
            }
            (
                a.histogram_cap.unwrap_or(ebf_analytics::DEFAULT_SAMPLE_CAP),
                a.extra_percentiles.clone(),
            )
        }
    };

    Ok(ParsedConfig {
        config_hash: fnv64_hex(text.as_bytes()),
        file,
        mode,
        seed,
        topology,
        workload,
        sweep,
        p99_bound_ns,
        histogram_cap,
        extra_percentiles,
        prediction,
        trainer,
        quality,
        network,
        asserts,
    })
}

fn build_topology(
    t: &TopologyCfg,
    file: &RunConfigFile,
    base_dir: &Path,
) -> Result<Topology, ConfigError> {
    if let Some(delay) = &t.edge_delay
        && parse_duration(delay, "topology.edge_delay")? != 0
    {
        return Err(constraint(
            "topology.edge_delay",
            "edge delays are an extension point; v1 requires 0",
        ));
    }
    let mut components = Vec::with_capacity(file.component.len());
    for (id, c) in &file.component {
        components.push(build_component(id, c, base_dir)?);
    }
    let plan = parse_plan(&t.plan).map_err(|e| constraint("topology.plan", e.to_string()))?;
    let mut fragments = BTreeMap::new();
    for (name, expr) in &file.plans {
        fragments.insert(
            name.clone(),
            parse_plan(expr).map_err(|e| constraint(&format!("plans.{name}"), e.to_string()))?,
        );
    }
    Ok(validate_topology(RawTopology {
        components,
        fragments,
        plan,
        entry: t.entry.clone(),
    })?)
}

fn build_component(
    id: &str,
    c: &ComponentCfg,
    base_dir: &Path,
) -> Result<ComponentSpec, ConfigError> {
    let path = format!("component.{id}");
    let kind = match c.kind.as_str() {
        "ai" => ComponentKind::Ai,
        "non_ai" => ComponentKind::NonAi,
        other => {
            return Err(constraint(
                &format!("{path}.kind"),
                format!("expected 'ai' or 'non_ai', got '{other}'"),
            ));
        }
    };
    let service = build_service(&c.service, &format!("{path}.service"), base_dir)?;
    Ok(ComponentSpec {
        id: id.to_string(),
        kind,
        servers: c.servers,
        discipline: Discipline::Fifo,
        service,
        quality: c.quality.as_ref().map(|q| QualityAttr {
            metric: q.metric.clone(),
            target: q.target,
        }),
    })
}

fn build_service(
    s: &ServiceCfg,
    path: &str,
    base_dir: &Path,
) -> Result<ServiceTimeModel, ConfigError> {
    let need = |field: &str, value: Option<&str>| {
        value.map(str::to_string).ok_or_else(|| {
            constraint(
                path,
                format!("distribution '{}' needs the '{field}' key", s.dist),
            )
        })
    };
    let model = match s.dist.as_str() {
        "deterministic" => ServiceTimeModel::Deterministic {
            value_ns: parse_duration(&need("value", s.value.as_deref())?, path)?,
        },
        "exponential" => ServiceTimeModel::Exponential {
            rate_per_sec: s.rate_per_sec.ok_or_else(|| {
                constraint(
                    path,
                    "distribution 'exponential' needs the 'rate_per_sec' key",
                )
            })?,
        },
        "lognormal" => match (s.location, s.scale, &s.mean, &s.p99) {
            (Some(location), Some(scale), None, None) => {
                ServiceTimeModel::LogNormal { location, scale }
            }
            (None, None, Some(mean), Some(p99)) => ServiceTimeModel::lognormal_from_mean_p99(
                parse_duration(mean, path)?,
                parse_duration(p99, path)?,
            )
            .map_err(|e| constraint(path, e.to_string()))?,
            _ => {
                return Err(constraint(
                    path,
                    "lognormal takes either (location, scale) of ln(seconds) or (mean, p99) durations",
                ));
            }
        },
        "shifted_pareto" => ServiceTimeModel::ShiftedPareto {
            shape: s
                .shape
                .ok_or_else(|| constraint(path, "shifted_pareto needs 'shape'"))?,
            scale_ns: parse_duration(&need("scale_time", s.scale_time.as_deref())?, path)?,
            shift_ns: match &s.shift {
                Some(d) => parse_duration(d, path)?,
                None => 0,
            },
        },
        "empirical" => {
            let rel = need("path", s.path.as_deref())?;
            let full = base_dir.join(&rel);
            let text = std::fs::read_to_string(&full).map_err(|source| ConfigError::Io {
                path: full.display().to_string(),
                source,
            })?;
            let mut samples = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                samples.push(parse_duration(line, &format!("{path} ({rel}:{})", i + 1))?);
            }
            ServiceTimeModel::Empirical {
                source: rel,
                samples,
            }
        }
        other => {
            return Err(constraint(path, format!("unknown distribution '{other}'")));
        }
    };
    Ok(model)
}

fn build_workload(w: &WorkloadCfg, seed: u64) -> Result<WorkloadSpec, ConfigError> {
    let mode = match w.loop_mode.as_str() {
        "open" => LoopMode::Open {
            rate_per_sec: w
                .rate_per_sec
                .ok_or_else(|| constraint("workload.rate_per_sec", "open loop needs a rate"))?,
        },
        "closed" => LoopMode::Closed {
            users: w
                .users
                .ok_or_else(|| constraint("workload.users", "closed loop needs users"))?,
            think_time_mean_ns: parse_duration(
                w.think_time_mean.as_deref().ok_or_else(|| {
                    constraint("workload.think_time_mean", "closed loop needs a think time")
                })?,
                "workload.think_time_mean",
            )?,
        },
        other => {
            return Err(constraint(
                "workload.loop",
                format!("expected 'open' or 'closed', got '{other}'"),
            ));
        }
    };
    let stop = match (&w.stop.requests, &w.stop.duration) {
        (Some(n), None) => StopRule::Requests(*n),
        (None, Some(d)) => StopRule::Duration(parse_duration(d, "workload.stop.duration")?),
        _ => {
            return Err(constraint(
                "workload.stop",
                "exactly one of 'requests' or 'duration' must be set",
            ));
        }
    };
    let spec = WorkloadSpec {
        mode,
        fraction_text: w.fraction_text,
        warmup_ns: match &w.warmup {
            Some(d) => parse_duration(d, "workload.warmup")?,
            None => 0,
        },
        stop,
        seed,
    };
    spec.validate()
        .map_err(|e| constraint("workload", e.to_string()))?;
    Ok(spec)
}

fn build_trainer(t: &TrainerCfg, file: &RunConfigFile) -> Result<TrainerPlan, ConfigError> {
    let mode = match t.mode.as_str() {
        "batch" => UpdateMode::Batch,
        "streaming" => UpdateMode::Streaming,
        other => {
            return Err(constraint(
                "trainer.mode",
                format!("expected 'batch' or 'streaming', got '{other}'"),
            ));
        }
    };
    let policy = UpdatePolicy {
        mode,
        interval_ns: parse_duration(&t.interval, "trainer.interval")?,
        curve: t.curve.iter().map(|[f, g]| (*f, *g)).collect(),
        base_accuracy: t.base_accuracy,
    };
    policy
        .validate()
        .map_err(|e| constraint("trainer.curve", e.to_string()))?;
    let candidates = t
        .candidates
        .iter()
        .enumerate()
        .map(|(i, d)| parse_duration(d, &format!("trainer.candidates[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let horizon_ns = match (&t.horizon, &file.workload) {
        (Some(h), _) => parse_duration(h, "trainer.horizon")?,
        (None, Some(w)) => match (&w.stop.duration, &w.stop.requests) {
            (Some(d), _) => parse_duration(d, "workload.stop.duration")?,
            _ => 24 * 3600 * NS_PER_SEC,
        },
        (None, None) => 24 * 3600 * NS_PER_SEC,
    };
    if let Some(station) = &t.station
        && !file.component.contains_key(station)
    {
        return Err(constraint(
            "trainer.station",
            format!("unknown station '{station}'"),
        ));
    }
    Ok(TrainerPlan {
        policy,
        candidates,
        per_update_cost_ns: parse_duration(&t.per_update_cost, "trainer.per_update_cost")?,
        objective_weight: t.objective_weight.unwrap_or(1.0),
        max_interval_ns: t
            .max_interval
            .as_ref()
            .map(|d| parse_duration(d, "trainer.max_interval"))
            .transpose()?,
        horizon_ns,
        station: t.station.clone(),
    })
}

fn build_network(n: &NetworkCfg, file: &RunConfigFile) -> Result<NetworkPlan, ConfigError> {
    let work = match n.work.as_deref().unwrap_or("sleep") {
        "sleep" => WorkMode::Sleep,
        "spin" => WorkMode::Spin,
        other => {
            return Err(constraint(
                "network.work",
                format!("expected 'sleep' or 'spin', got '{other}'"),
            ));
        }
    };
    let mut addresses = BTreeMap::new();
    for (component, addr) in &n.addresses {
        if !file.component.contains_key(component) {
            return Err(constraint(
                &format!("network.addresses.{component}"),
                "address names an unknown component",
            ));
        }
        let parsed: SocketAddr = addr.parse().map_err(|e| {
            constraint(
                &format!("network.addresses.{component}"),
                format!("bad address '{addr}': {e}"),
            )
        })?;
        addresses.insert(component.clone(), parsed);
    }
    let mut component_kernels = BTreeMap::new();
    for (id, c) in &file.component {
        if let Some(k) = &c.kernel {
            let spec = crate::kernels_cli::parse_kernel_spec(&k.name, &k.shape, 1, 0)
                .map_err(|e| constraint(&format!("component.{id}.kernel"), e.to_string()))?;
            component_kernels.insert(id.clone(), spec);
        }
    }
    Ok(NetworkPlan {
        addresses,
        work,
        component_kernels,
        request_timeout: Duration::from_nanos(match &n.request_timeout {
            Some(d) => parse_duration(d, "network.request_timeout")?,
            None => 5 * NS_PER_SEC,
        }),
        payload_bytes: n.payload_bytes.unwrap_or(64),
    })
}

/// Quality value to stamp onto traces: explicit config wins, otherwise the
/// trainer's base accuracy plus the gain at its chosen interval.
pub fn effective_quality(quality: &QualityPlan, trainer: Option<&TrainerPlan>) -> Option<f64> {
    if quality.achieved.is_some() {
        return quality.achieved;
    }
    let t = trainer?;
    let records = ebf_trainer::evaluate_policy(
        &t.policy,
        &t.candidates,
        &ebf_trainer::EvalParams {
            horizon_ns: t.horizon_ns,
            per_update_cost_ns: t.per_update_cost_ns,
            objective_weight: t.objective_weight,
            max_interval_ns: t.max_interval_ns,
        },
    )
    .ok()?;
    let chosen = ebf_trainer::choose_interval(&records).ok()?;
    let gain = records
        .iter()
        .find(|r| r.interval_ns == chosen)
        .map(|r| r.accuracy_gain)
        .unwrap_or(0.0);
    Some((t.policy.base_accuracy + gain).min(1.0))
}
