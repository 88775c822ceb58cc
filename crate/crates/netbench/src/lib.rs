//! Network-mode execution: the same topology the simulator runs, realized as
//! operating-system processes talking over TCP with a minimal framed
//! protocol, so measured latencies include real scheduling and network
//! effects.
//!
//! Timestamps are taken on each host's monotonic clock. Per-span durations
//! are always trustworthy; absolute cross-host ordering is not attempted, and
//! runs against non-loopback addresses are flagged. No TLS, no auth, no
//! service discovery: addresses are static configuration.

pub mod client;
pub mod clock;
pub mod frame;
pub mod server;

use std::net::SocketAddr;

use thiserror::Error;

pub use client::{DriveOutcome, DriveSpec, DriveStats, drive_load};
pub use frame::{Frame, FrameError, MsgType, TsEntry};
pub use server::{ServiceHandle, ServiceRuntime, WorkMode, spawn_service};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("failed to connect to {addr}: {source}")]
    ConnectFailed {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("component '{component}' at {addr} failed its health check")]
    HealthCheckFailed { component: String, addr: SocketAddr },
    #[error("no address configured for component '{0}'")]
    MissingAddress(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Workload(#[from] ebf_workload::WorkloadError),
    #[error(transparent)]
    Kernel(#[from] ebf_kernels::KernelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
