//! Request traces and trace arithmetic.
//!
//! Every request produces a tree of spans: a synthetic root span covering the
//! whole request, optional module spans grouping stations, and leaf spans for
//! individual station visits. All stamps are nanoseconds on a monotonic
//! timeline.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::component::RequestClass;
use crate::time::Ns;

/// One timed section of a request: a station visit (leaf) or a grouping span
/// (module or root) whose children it covers.
///
/// `enqueue <= start <= end`, and child intervals lie within `[start, end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub component_id: Arc<str>,
    pub enqueue_ns: Ns,
    pub start_ns: Ns,
    pub end_ns: Ns,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Span>,
}

impl Span {
    pub fn leaf(component_id: Arc<str>, enqueue_ns: Ns, start_ns: Ns, end_ns: Ns) -> Self {
        Span {
            component_id,
            enqueue_ns,
            start_ns,
            end_ns,
            children: Vec::new(),
        }
    }

    /// Total residence time: queueing plus service.
    pub fn residence_ns(&self) -> Ns {
        self.end_ns.saturating_sub(self.enqueue_ns)
    }

    /// Pure service time, excluding the queue wait.
    pub fn service_ns(&self) -> Ns {
        self.end_ns.saturating_sub(self.start_ns)
    }
}

/// One request: its arrival class, timing, and the span tree it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestTrace {
    pub request_id: u64,
    pub class: RequestClass,
    pub arrival_ns: Ns,
    pub completion_ns: Ns,
    pub root_span: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_achieved: Option<f64>,
}

/// Consumes traces as a run produces them, so large runs need not hold every
/// trace in memory.
pub trait TraceSink {
    fn accept(&mut self, trace: RequestTrace);
}

/// Collects every trace into a vector. Fine for desk-scale runs.
#[derive(Default)]
pub struct VecSink(pub Vec<RequestTrace>);

impl TraceSink for VecSink {
    fn accept(&mut self, trace: RequestTrace) {
        self.0.push(trace);
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error(
        "malformed span tree at '{component_id}': {reason} \
         (enqueue {enqueue_ns}, start {start_ns}, end {end_ns})"
    )]
    MalformedSpanTree {
        component_id: String,
        reason: &'static str,
        enqueue_ns: Ns,
        start_ns: Ns,
        end_ns: Ns,
    },
}

/// Time from arrival (or intended send) to completion. The trace invariant
/// `completion >= arrival` keeps this non-negative.
pub fn end_to_end_latency(trace: &RequestTrace) -> Ns {
    trace.completion_ns.saturating_sub(trace.arrival_ns)
}

/// Validates the span-nesting invariant over the whole tree.
pub fn validate_span_tree(span: &Span) -> Result<(), TraceError> {
    let fail = |reason| {
        Err(TraceError::MalformedSpanTree {
            component_id: span.component_id.to_string(),
            reason,
            enqueue_ns: span.enqueue_ns,
            start_ns: span.start_ns,
            end_ns: span.end_ns,
        })
    };
    if !(span.enqueue_ns <= span.start_ns && span.start_ns <= span.end_ns) {
        return fail("enqueue <= start <= end violated");
    }
    for child in &span.children {
        if child.enqueue_ns < span.start_ns || child.end_ns > span.end_ns {
            return fail("child interval escapes parent");
        }
        validate_span_tree(child)?;
    }
    Ok(())
}

/// Length of the critical path through the span tree.
///
/// Children that ran back-to-back (one ends before the next is enqueued)
/// chain additively; overlapping children contribute the heaviest alternative.
/// Sequential stages therefore sum and parallel fan-outs take the max, and the
/// result never exceeds the end-to-end latency.
pub fn critical_path(trace: &RequestTrace) -> Result<Ns, TraceError> {
    validate_span_tree(&trace.root_span)?;
    Ok(span_critical_path(&trace.root_span))
}

fn span_critical_path(span: &Span) -> Ns {
    if span.children.is_empty() {
        return span.residence_ns();
    }
    let mut children: Vec<&Span> = span.children.iter().collect();
    children.sort_by_key(|c| (c.enqueue_ns, c.end_ns));
    // Longest weighted chain in the interval order: child i can follow child j
    // when j finished before i was enqueued.
    let weights: Vec<Ns> = children.iter().map(|c| span_critical_path(c)).collect();
    let mut best = vec![0u64; children.len()];
    let mut overall = 0;
    for i in 0..children.len() {
        let mut prefix = 0;
        for j in 0..i {
            if children[j].end_ns <= children[i].enqueue_ns {
                prefix = prefix.max(best[j]);
            }
        }
        best[i] = prefix + weights[i];
        overall = overall.max(best[i]);
    }
    overall
}
