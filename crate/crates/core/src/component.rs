//! Pipeline station descriptions: what a component is, how many parallel
//! service slots it has, and how its service time is drawn.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Ns;

/// Class of a request, which drives class-based branching (e.g. a text query
/// goes to the text classifier, an image query to the image classifier).
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestClass {
    Text,
    Image,
}

impl RequestClass {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestClass::Text => "text",
            RequestClass::Image => "image",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Ai,
    NonAi,
}

/// Queue discipline of a station. Only FIFO ships in v1; the enum leaves room
/// for priority disciplines.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discipline {
    #[default]
    Fifo,
}

/// How a station's service time is drawn. All draws are strictly positive.
///
/// `location` and `scale` of the lognormal are the mean and standard deviation
/// of ln(seconds).
#[derive(Clone, Debug, PartialEq)]
pub enum ServiceTimeModel {
    Deterministic {
        value_ns: Ns,
    },
    Exponential {
        rate_per_sec: f64,
    },
    LogNormal {
        location: f64,
        scale: f64,
    },
    ShiftedPareto {
        shape: f64,
        scale_ns: Ns,
        shift_ns: Ns,
    },
    /// Samples drawn uniformly from a recorded set, loaded from `source`.
    Empirical {
        source: String,
        samples: Vec<Ns>,
    },
}

impl ServiceTimeModel {
    /// Builds a lognormal from a target mean and p99 (both in nanoseconds) by
    /// solving exp(m + s²/2) = mean and exp(m + z₉₉·s) = p99 for the smaller
    /// root of s.
    pub fn lognormal_from_mean_p99(mean_ns: Ns, p99_ns: Ns) -> Result<Self, ComponentError> {
        const Z99: f64 = 2.326_347_874_040_841;
        if mean_ns == 0 || p99_ns <= mean_ns {
            return Err(ComponentError::InvalidModel(format!(
                "lognormal fit needs 0 < mean < p99, got mean {mean_ns} ns, p99 {p99_ns} ns"
            )));
        }
        let spread = (p99_ns as f64 / mean_ns as f64).ln();
        let disc = Z99 * Z99 - 2.0 * spread;
        if disc < 0.0 {
            return Err(ComponentError::InvalidModel(format!(
                "lognormal fit infeasible: p99/mean ratio {:.3} too large",
                p99_ns as f64 / mean_ns as f64
            )));
        }
        let scale = Z99 - disc.sqrt();
        let mean_secs = crate::time::secs_from_ns(mean_ns);
        let location = mean_secs.ln() - scale * scale / 2.0;
        Ok(ServiceTimeModel::LogNormal { location, scale })
    }

    /// Mean of the distribution in seconds, where it exists in closed form.
    pub fn mean_secs(&self) -> f64 {
        match self {
            ServiceTimeModel::Deterministic { value_ns } => crate::time::secs_from_ns(*value_ns),
            ServiceTimeModel::Exponential { rate_per_sec } => 1.0 / rate_per_sec,
            ServiceTimeModel::LogNormal { location, scale } => {
                (location + scale * scale / 2.0).exp()
            }
            ServiceTimeModel::ShiftedPareto {
                shape,
                scale_ns,
                shift_ns,
            } => {
                crate::time::secs_from_ns(*shift_ns)
                    + shape * crate::time::secs_from_ns(*scale_ns) / (shape - 1.0)
            }
            ServiceTimeModel::Empirical { samples, .. } => {
                let sum: u128 = samples.iter().map(|&s| u128::from(s)).sum();
                crate::time::secs_from_ns((sum / samples.len().max(1) as u128) as Ns)
            }
        }
    }

    pub fn validate(&self) -> Result<(), ComponentError> {
        let fail = |msg: String| Err(ComponentError::InvalidModel(msg));
        match self {
            ServiceTimeModel::Deterministic { value_ns } => {
                if *value_ns == 0 {
                    return fail("deterministic service time must be positive".into());
                }
            }
            ServiceTimeModel::Exponential { rate_per_sec } => {
                if !(rate_per_sec.is_finite() && *rate_per_sec > 0.0) {
                    return fail(format!("exponential rate must be > 0, got {rate_per_sec}"));
                }
            }
            ServiceTimeModel::LogNormal { location, scale } => {
                if !location.is_finite() || !scale.is_finite() || *scale <= 0.0 {
                    return fail(format!(
                        "lognormal needs finite location and scale > 0, got ({location}, {scale})"
                    ));
                }
            }
            ServiceTimeModel::ShiftedPareto {
                shape, scale_ns, ..
            } => {
                if !(shape.is_finite() && *shape > 1.0) {
                    return fail(format!(
                        "pareto shape must exceed 1 (finite mean), got {shape}"
                    ));
                }
                if *scale_ns == 0 {
                    return fail("pareto scale must be positive".into());
                }
            }
            ServiceTimeModel::Empirical { source, samples } => {
                if samples.is_empty() {
                    return fail(format!("empirical sample set '{source}' is empty"));
                }
                if samples.contains(&0) {
                    return fail(format!(
                        "empirical sample set '{source}' contains a zero duration"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Model-quality attribute attached to an AI component: a metric name and a
/// target value in (0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityAttr {
    pub metric: String,
    pub target: f64,
}

impl QualityAttr {
    pub fn validate(&self) -> Result<(), ComponentError> {
        if !(self.target > 0.0 && self.target <= 1.0) {
            return Err(ComponentError::InvalidQuality {
                metric: self.metric.clone(),
                target: self.target,
            });
        }
        Ok(())
    }
}

/// Distribution of results returned by one probe of a tiered-search tier.
#[derive(Clone, Debug, PartialEq)]
pub enum YieldModel {
    Deterministic(u64),
    Poisson(f64),
    UniformInt { lo: u64, hi: u64 },
}

impl YieldModel {
    pub fn validate(&self) -> Result<(), ComponentError> {
        match self {
            YieldModel::Deterministic(_) => Ok(()),
            YieldModel::Poisson(mean) => {
                if mean.is_finite() && *mean >= 0.0 {
                    Ok(())
                } else {
                    Err(ComponentError::InvalidModel(format!(
                        "poisson yield mean must be non-negative, got {mean}"
                    )))
                }
            }
            YieldModel::UniformInt { lo, hi } => {
                if lo <= hi {
                    Ok(())
                } else {
                    Err(ComponentError::InvalidModel(format!(
                        "uniform yield range is inverted: [{lo}, {hi}]"
                    )))
                }
            }
        }
    }
}

/// One pipeline station: identity, parallel service slots, queue discipline,
/// and the service-time model its work is drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentSpec {
    pub id: String,
    pub kind: ComponentKind,
    /// Parallel service slots (the k of an M/M/k station).
    pub servers: u32,
    pub discipline: Discipline,
    pub service: ServiceTimeModel,
    pub quality: Option<QualityAttr>,
}

impl ComponentSpec {
    pub fn validate(&self) -> Result<(), ComponentError> {
        if self.id.is_empty() {
            return Err(ComponentError::InvalidModel("component id is empty".into()));
        }
        if self.servers == 0 {
            return Err(ComponentError::NoServers {
                id: self.id.clone(),
            });
        }
        self.service.validate()?;
        if let Some(q) = &self.quality {
            q.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ComponentError {
    #[error("servers must be >= 1 on component '{id}'")]
    NoServers { id: String },
    #[error("invalid service-time model: {0}")]
    InvalidModel(String),
    #[error("quality target for metric '{metric}' must lie in (0, 1], got {target}")]
    InvalidQuality { metric: String, target: f64 },
}
