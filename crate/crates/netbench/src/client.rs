//! The load driver: issues requests to the entry service per the workload
//! spec (open loop on a precomputed schedule, closed loop with one thread per
//! user), records scheduled/sent/response times, and reconstructs request
//! traces from the timestamp entries responses carry.
//!
//! Open-loop latency is reported from the *scheduled* send, so a stalled
//! client cannot mask server-side queueing (coordinated omission); the
//! actual-send numbers ride along in the trace's root span.

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use ebf_core::component::RequestClass;
use ebf_core::time::Ns;
use ebf_core::topology::{Plan, Topology};
use ebf_core::trace::{RequestTrace, Span};
use ebf_workload::{LoopMode, StopRule, UserState, WorkloadSpec, gen_open_loop};
use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::NetError;
use crate::clock::monotonic_ns;
use crate::frame::{
    FLAG_QUOTA_SHORTFALL, Frame, MsgType, STATUS_OK, TsEntry, read_frame, write_frame,
};

pub struct DriveSpec {
    pub entry: SocketAddr,
    pub topology: Arc<Topology>,
    /// Every component address, health-checked before driving.
    pub addresses: BTreeMap<String, SocketAddr>,
    pub workload: WorkloadSpec,
    pub request_timeout: Duration,
    /// Opaque padding carried in request payloads.
    pub payload_bytes: usize,
    pub quality_achieved: Option<f64>,
    /// How long to keep retrying health checks before giving up.
    pub health_wait: Duration,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DriveStats {
    pub issued: u64,
    pub ok: u64,
    pub errors: u64,
    pub timeouts: u64,
    pub quota_shortfalls: u64,
    /// True when any configured address is not loopback; absolute cross-host
    /// span ordering is then unreliable (durations stay valid).
    pub multi_host: bool,
    pub wall_ns: Ns,
}

impl DriveStats {
    pub fn conserved(&self) -> bool {
        self.issued == self.ok + self.errors + self.timeouts
    }
}

#[derive(Debug)]
pub struct DriveOutcome {
    pub traces: Vec<RequestTrace>,
    pub stats: DriveStats,
}

enum Outcome {
    Trace(Box<RequestTrace>, u8),
    Error,
    Timeout,
}

/// Drives the configured workload against the entry service. Every issued
/// request is accounted for: a trace, an error, or a timeout.
pub fn drive_load(spec: &DriveSpec) -> Result<DriveOutcome, NetError> {
    spec.workload.validate()?;
    health_check_all(spec)?;

    let t0 = monotonic_ns();
    let shared = Shared {
        entry: spec.entry,
        t0,
        timeout: spec.request_timeout,
        payload_bytes: spec.payload_bytes,
        quality: spec.quality_achieved,
        names: component_names(&spec.topology),
        modules: module_of_station(&spec.topology),
    };
    let shared = Arc::new(shared);

    let outcomes = match spec.workload.mode {
        LoopMode::Open { .. } => drive_open(spec, &shared)?,
        LoopMode::Closed {
            users,
            think_time_mean_ns,
        } => drive_closed(spec, &shared, users, think_time_mean_ns),
    };

    let mut stats = DriveStats {
        multi_host: spec.addresses.values().any(|a| !a.ip().is_loopback())
            || !spec.entry.ip().is_loopback(),
        wall_ns: monotonic_ns() - t0,
        ..DriveStats::default()
    };
    let mut traces = Vec::new();
    for outcome in outcomes {
        stats.issued += 1;
        match outcome {
            Outcome::Trace(trace, flags) => {
                stats.ok += 1;
                if flags & FLAG_QUOTA_SHORTFALL != 0 {
                    stats.quota_shortfalls += 1;
                }
                traces.push(*trace);
            }
            Outcome::Error => stats.errors += 1,
            Outcome::Timeout => stats.timeouts += 1,
        }
    }
    traces.sort_by_key(|t| (t.arrival_ns, t.request_id));
    info!(
        "drive complete: {} issued, {} ok, {} errors, {} timeouts",
        stats.issued, stats.ok, stats.errors, stats.timeouts
    );
    Ok(DriveOutcome { traces, stats })
}

fn health_check_all(spec: &DriveSpec) -> Result<(), NetError> {
    let mut targets: Vec<(String, SocketAddr)> = vec![("entry".to_string(), spec.entry)];
    targets.extend(spec.addresses.iter().map(|(k, v)| (k.clone(), *v)));
    let deadline = Instant::now() + spec.health_wait;
    for (component, addr) in targets {
        loop {
            match health_check(addr) {
                Ok(()) => break,
                Err(e) => {
                    if Instant::now() >= deadline {
                        debug!("health check for '{component}' at {addr} failed: {e}");
                        return Err(NetError::HealthCheckFailed { component, addr });
                    }
                    thread::sleep(Duration::from_millis(50));
                }
            }
        }
    }
    Ok(())
}

fn health_check(addr: SocketAddr) -> Result<(), NetError> {
    let mut stream = TcpStream::connect_timeout(&addr, Duration::from_millis(500))
        .map_err(|source| NetError::ConnectFailed { addr, source })?;
    stream.set_read_timeout(Some(Duration::from_millis(500)))?;
    stream.set_write_timeout(Some(Duration::from_millis(500)))?;
    write_frame(&mut stream, &Frame::health())?;
    let resp = read_frame(&mut stream)?;
    if resp.msg_type == MsgType::Health {
        Ok(())
    } else {
        Err(NetError::HealthCheckFailed {
            component: "unknown".into(),
            addr,
        })
    }
}

struct Shared {
    entry: SocketAddr,
    t0: Ns,
    timeout: Duration,
    payload_bytes: usize,
    quality: Option<f64>,
    names: BTreeMap<u64, Arc<str>>,
    modules: BTreeMap<String, Arc<str>>,
}

fn component_names(topology: &Topology) -> BTreeMap<u64, Arc<str>> {
    topology
        .components()
        .iter()
        .map(|c| (Frame::component_hash(&c.id), Arc::from(c.id.as_str())))
        .collect()
}

/// Maps each station id to its outermost module label, which is the grouping
/// the module-level breakdown reports.
fn module_of_station(topology: &Topology) -> BTreeMap<String, Arc<str>> {
    fn walk(plan: &Plan, current: Option<&Arc<str>>, out: &mut BTreeMap<String, Arc<str>>) {
        match plan {
            Plan::Station(id) => {
                if let Some(label) = current {
                    out.entry(id.clone()).or_insert_with(|| label.clone());
                }
            }
            Plan::Seq(children) | Plan::Par(children) => {
                for c in children {
                    walk(c, current, out);
                }
            }
            Plan::BranchClass { text, image } => {
                walk(text, current, out);
                walk(image, current, out);
            }
            Plan::BranchWeighted(arms) => {
                for (_, c) in arms {
                    walk(c, current, out);
                }
            }
            Plan::Tiered { tiers, .. } => {
                if let Some(label) = current {
                    for t in tiers {
                        out.entry(t.station.clone())
                            .or_insert_with(|| label.clone());
                    }
                }
            }
            Plan::Module { label, inner } => {
                let label: Arc<str> = Arc::from(label.as_str());
                walk(inner, Some(current.unwrap_or(&label)), out);
            }
            Plan::Ref(_) => {}
        }
    }
    let mut out = BTreeMap::new();
    walk(topology.plan(), None, &mut out);
    out
}

fn drive_open(spec: &DriveSpec, shared: &Arc<Shared>) -> Result<Vec<Outcome>, NetError> {
    let events = gen_open_loop(&spec.workload)?;
    let mut handles = Vec::with_capacity(events.len());
    for event in events {
        let target = shared.t0 + event.scheduled_ns;
        sleep_until(target);
        let shared = shared.clone();
        handles.push(thread::spawn(move || {
            do_request(&shared, event.request_id, event.class, target)
        }));
    }
    Ok(handles
        .into_iter()
        .map(|h| h.join().expect("request worker panicked"))
        .collect())
}

fn drive_closed(
    spec: &DriveSpec,
    shared: &Arc<Shared>,
    users: u32,
    think_time_mean_ns: Ns,
) -> Vec<Outcome> {
    let stop = Arc::new(AtomicBool::new(false));
    let measured = Arc::new(AtomicU64::new(0));
    let fraction_text = spec.workload.fraction_text;
    let warmup_ns = spec.workload.warmup_ns;
    let stop_rule = spec.workload.stop;
    let seed = spec.workload.seed;

    let mut handles = Vec::with_capacity(users as usize);
    for u in 0..users {
        let shared = shared.clone();
        let stop = stop.clone();
        let measured = measured.clone();
        handles.push(thread::spawn(move || {
            let mut outcomes = Vec::new();
            let mut state = UserState::new(seed, u);
            // Request ids carry the user in the high bits; uniqueness is all
            // that matters here.
            let mut serial: u64 = 0;
            let mut arrival = state.first_arrival(think_time_mean_ns, fraction_text, 0);
            loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                if let StopRule::Duration(d) = stop_rule
                    && arrival.scheduled_ns > d
                {
                    break;
                }
                let id = (u64::from(u) << 32) | serial;
                serial += 1;
                let target = shared.t0 + arrival.scheduled_ns;
                sleep_until(target);
                let outcome = do_request(&shared, id, arrival.class, target);
                let completion_rel = monotonic_ns().saturating_sub(shared.t0);
                outcomes.push(outcome);
                if arrival.scheduled_ns >= warmup_ns {
                    let done = measured.fetch_add(1, Ordering::Relaxed) + 1;
                    if let StopRule::Requests(n) = stop_rule
                        && done >= n
                    {
                        stop.store(true, Ordering::Relaxed);
                        break;
                    }
                }
                arrival = state.next_arrival(completion_rel, think_time_mean_ns, fraction_text, 0);
            }
            outcomes
        }));
    }
    handles
        .into_iter()
        .flat_map(|h| h.join().expect("user worker panicked"))
        .collect()
}

fn sleep_until(target_abs_ns: Ns) {
    loop {
        let now = monotonic_ns();
        if now >= target_abs_ns {
            return;
        }
        thread::sleep(Duration::from_nanos(target_abs_ns - now));
    }
}

fn do_request(shared: &Shared, request_id: u64, class: RequestClass, scheduled_abs: Ns) -> Outcome {
    let class_byte = match class {
        RequestClass::Text => 0u8,
        RequestClass::Image => 1u8,
    };
    let attempt = || -> Result<(Frame, Ns, Ns), std::io::Error> {
        let mut stream = TcpStream::connect_timeout(&shared.entry, shared.timeout)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(shared.timeout))?;
        stream.set_write_timeout(Some(shared.timeout))?;
        let sent_abs = monotonic_ns();
        write_frame(
            &mut stream,
            &Frame::request(request_id, class_byte, vec![0u8; shared.payload_bytes]),
        )?;
        let resp = read_frame(&mut stream).map_err(|e| match e {
            crate::frame::FrameError::Io(io) => io,
            other => std::io::Error::other(other.to_string()),
        })?;
        Ok((resp, sent_abs, monotonic_ns()))
    };
    match attempt() {
        Ok((resp, sent_abs, recv_abs)) => {
            if resp.status() != STATUS_OK || resp.msg_type != MsgType::Response {
                return Outcome::Error;
            }
            let flags = resp.flags();
            let trace = build_trace(
                shared,
                request_id,
                class,
                scheduled_abs,
                sent_abs,
                recv_abs,
                &resp.timestamps,
            );
            Outcome::Trace(Box::new(trace), flags)
        }
        Err(e)
            if matches!(
                e.kind(),
                std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
            ) =>
        {
            Outcome::Timeout
        }
        Err(_) => Outcome::Error,
    }
}

/// Rebuilds a request trace on the client's timeline: the root span runs from
/// the scheduled send to the response, server entries become leaf spans, and
/// consecutive leaves belonging to one module are wrapped into a module span.
fn build_trace(
    shared: &Shared,
    request_id: u64,
    class: RequestClass,
    scheduled_abs: Ns,
    sent_abs: Ns,
    recv_abs: Ns,
    entries: &[TsEntry],
) -> RequestTrace {
    let rel = |abs: Ns| abs.saturating_sub(shared.t0);
    let mut children: Vec<Span> = Vec::new();
    let mut open_module: Option<(Arc<str>, Vec<Span>)> = None;

    let flush = |open: &mut Option<(Arc<str>, Vec<Span>)>, children: &mut Vec<Span>| {
        if let Some((label, spans)) = open.take() {
            let enqueue = spans.iter().map(|s| s.enqueue_ns).min().unwrap_or(0);
            let end = spans.iter().map(|s| s.end_ns).max().unwrap_or(0);
            children.push(Span {
                component_id: label,
                enqueue_ns: enqueue,
                start_ns: enqueue,
                end_ns: end,
                children: spans,
            });
        }
    };

    for entry in entries {
        let name = match shared.names.get(&entry.component_hash) {
            Some(n) => n.clone(),
            None => {
                debug!(
                    "unknown component hash {:016x} in response",
                    entry.component_hash
                );
                continue;
            }
        };
        let leaf = Span::leaf(
            name.clone(),
            rel(entry.enqueue_ns),
            rel(entry.start_ns),
            rel(entry.end_ns),
        );
        match shared.modules.get(name.as_ref()) {
            Some(label) => match &mut open_module {
                Some((current, spans)) if current.as_ref() == label.as_ref() => spans.push(leaf),
                _ => {
                    flush(&mut open_module, &mut children);
                    open_module = Some((label.clone(), vec![leaf]));
                }
            },
            None => {
                flush(&mut open_module, &mut children);
                children.push(leaf);
            }
        }
    }
    flush(&mut open_module, &mut children);

    RequestTrace {
        request_id,
        class,
        arrival_ns: rel(scheduled_abs),
        completion_ns: rel(recv_abs),
        root_span: Span {
            component_id: Arc::from("root"),
            enqueue_ns: rel(scheduled_abs),
            start_ns: rel(sent_abs),
            end_ns: rel(recv_abs),
            children,
        },
        quality_achieved: shared.quality,
    }
}
