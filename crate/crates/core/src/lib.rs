//! Shared domain types for the ebf benchmark harness: pipeline components,
//! topology composition and validation, request traces, and trace arithmetic.
//!
//! Everything here is plain data. Types are immutable once a topology has been
//! validated and are safe to share across concurrent workers; traces are
//! produced by one worker and merged after a run completes.

pub mod component;
pub mod hash;
pub mod time;
pub mod topology;
pub mod trace;

pub use component::{
    ComponentKind, ComponentSpec, Discipline, QualityAttr, RequestClass, ServiceTimeModel,
    YieldModel,
};
pub use topology::{Plan, RawTopology, Tier, Topology, TopologyError, validate_topology};
pub use trace::{
    RequestTrace, Span, TraceError, TraceSink, critical_path, end_to_end_latency,
    validate_span_tree,
};
