//! Deterministic discrete-event simulation of a component topology under a
//! workload.
//!
//! The simulator core is strictly single-threaded per run; identical
//! (topology, workload, seed) inputs produce identical trace sets bit for
//! bit. Multiple runs (a rate sweep, say) can execute concurrently with
//! independent state.

mod engine;
mod exec;
mod sample;
mod stats;

pub use engine::{SimError, Simulation, TrainingLoad, run, run_collect};
pub use exec::{TieredCursor, resolve_weighted};
pub use sample::{sample_service_time, sample_yield};
pub use stats::{RunStats, StationStats, WarmupFilter};
