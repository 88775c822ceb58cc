//! Request arrival generation.
//!
//! Two modes: open loop, where arrivals follow a Poisson process at rate λ
//! regardless of completions, and closed loop, where each of N users issues
//! its next request one exponential think time after the previous completion.
//!
//! Generation is a pure function of the spec (including its seed): the same
//! spec yields a bit-identical event stream. Every user or stream draws from
//! an independent substream derived from the master seed, so partitioned
//! generation stays reproducible.
//!
//! Open-loop latency is measured from the *intended* send time, not the
//! actual one, so a stalled sender cannot hide queueing delay (coordinated
//! omission); reports carry both numbers.

pub mod rng;

use std::io::Write;

use ebf_core::component::RequestClass;
use ebf_core::time::{NS_PER_SEC, Ns, ns_from_secs_f64};
use ebf_core::trace::RequestTrace;
use rand::RngExt;
use rand_distr::Exp1;
use rand_pcg::Pcg64;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("open-loop arrival rate must be > 0, got {0}")]
    InvalidRate(f64),
    #[error("closed loop needs at least one user")]
    NoUsers,
    #[error("closed-loop think time mean must be positive")]
    InvalidThinkTime,
    #[error("fraction_text must lie in [0, 1], got {0}")]
    InvalidMix(f64),
    #[error("generating this workload would produce no events")]
    EmptyWorkload,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LoopMode {
    /// Arrivals form a Poisson process with the given rate.
    Open { rate_per_sec: f64 },
    /// N users cycle: think (exponential with the given mean), send, wait.
    Closed { users: u32, think_time_mean_ns: Ns },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum StopRule {
    /// Open loop: number of arrivals generated. Closed loop: number of
    /// measured (post-warm-up) completions to collect.
    Requests(u64),
    /// Stop generating at this point on the timeline.
    Duration(Ns),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub mode: LoopMode,
    /// Fraction of requests carrying text (the rest carry images).
    pub fraction_text: f64,
    pub warmup_ns: Ns,
    pub stop: StopRule,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        match &self.mode {
            LoopMode::Open { rate_per_sec } => {
                if !(rate_per_sec.is_finite() && *rate_per_sec > 0.0) {
                    return Err(WorkloadError::InvalidRate(*rate_per_sec));
                }
            }
            LoopMode::Closed {
                users,
                think_time_mean_ns,
            } => {
                if *users == 0 {
                    return Err(WorkloadError::NoUsers);
                }
                if *think_time_mean_ns == 0 {
                    return Err(WorkloadError::InvalidThinkTime);
                }
            }
        }
        if !(0.0..=1.0).contains(&self.fraction_text) || !self.fraction_text.is_finite() {
            return Err(WorkloadError::InvalidMix(self.fraction_text));
        }
        Ok(())
    }
}

/// One scheduled request arrival. Streams are non-decreasing in
/// `scheduled_ns`, with ties broken by `request_id`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ArrivalEvent {
    pub request_id: u64,
    pub scheduled_ns: Ns,
    pub class: RequestClass,
}

/// Draws an exponential duration with the given mean, floored at one tick so
/// durations stay strictly positive.
pub fn exp_duration(rng: &mut Pcg64, mean_ns: Ns) -> Ns {
    let unit: f64 = rng.sample(Exp1);
    ns_from_secs_f64(unit * mean_ns as f64 / NS_PER_SEC as f64).max(1)
}

/// Draws the request class from the text/image mix.
pub fn draw_class(rng: &mut Pcg64, fraction_text: f64) -> RequestClass {
    if rng.random::<f64>() < fraction_text {
        RequestClass::Text
    } else {
        RequestClass::Image
    }
}

/// Generates the full open-loop arrival stream: i.i.d. exponential gaps with
/// mean 1/λ, classes Bernoulli(fraction_text), ending at the stop condition.
pub fn gen_open_loop(spec: &WorkloadSpec) -> Result<Vec<ArrivalEvent>, WorkloadError> {
    spec.validate()?;
    let LoopMode::Open { rate_per_sec } = spec.mode else {
        return Err(WorkloadError::InvalidRate(0.0));
    };
    let mean_gap_ns = NS_PER_SEC as f64 / rate_per_sec;
    let mut rng = rng::substream(spec.seed, "open-loop", 0);
    let mut events = Vec::new();
    let mut now_ns: Ns = 0;
    let mut next_id = 0u64;
    loop {
        match spec.stop {
            StopRule::Requests(n) => {
                if next_id >= n {
                    break;
                }
            }
            StopRule::Duration(_) => {}
        }
        let unit: f64 = rng.sample(Exp1);
        now_ns += ns_from_secs_f64(unit * mean_gap_ns / NS_PER_SEC as f64).max(1);
        if let StopRule::Duration(d) = spec.stop
            && now_ns > d
        {
            break;
        }
        events.push(ArrivalEvent {
            request_id: next_id,
            scheduled_ns: now_ns,
            class: draw_class(&mut rng, spec.fraction_text),
        });
        next_id += 1;
    }
    Ok(events)
}

/// Per-user state for closed-loop generation: the user's independent RNG
/// substream.
#[derive(Clone, Debug)]
pub struct UserState {
    pub user: u32,
    rng: Pcg64,
}

impl UserState {
    pub fn new(master_seed: u64, user: u32) -> Self {
        UserState {
            user,
            rng: rng::substream(master_seed, "user", u64::from(user)),
        }
    }

    /// The user's first arrival: one think time after the run starts.
    pub fn first_arrival(
        &mut self,
        think_time_mean_ns: Ns,
        fraction_text: f64,
        request_id: u64,
    ) -> ArrivalEvent {
        self.next_arrival(0, think_time_mean_ns, fraction_text, request_id)
    }

    /// The user's next arrival after a completion: scheduled one exponential
    /// think time later, class re-drawn from the mix.
    pub fn next_arrival(
        &mut self,
        completion_ns: Ns,
        think_time_mean_ns: Ns,
        fraction_text: f64,
        request_id: u64,
    ) -> ArrivalEvent {
        let think = exp_duration(&mut self.rng, think_time_mean_ns);
        ArrivalEvent {
            request_id,
            scheduled_ns: completion_ns + think,
            class: draw_class(&mut self.rng, fraction_text),
        }
    }
}

/// Splits traces at the warm-up boundary: traces that arrived before it are
/// discarded from all statistics.
pub fn split_warmup(
    traces: Vec<RequestTrace>,
    warmup_ns: Ns,
) -> (Vec<RequestTrace>, Vec<RequestTrace>) {
    traces.into_iter().partition(|t| t.arrival_ns < warmup_ns)
}

/// Writes one event per line: `request_id,scheduled_time_ns,class`.
pub fn export_arrivals<W: Write>(events: &[ArrivalEvent], mut out: W) -> std::io::Result<()> {
    for e in events {
        writeln!(
            out,
            "{},{},{}",
            e.request_id,
            e.scheduled_ns,
            e.class.as_str()
        )?;
    }
    Ok(())
}
