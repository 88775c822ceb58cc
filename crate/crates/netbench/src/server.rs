//! A component service: k worker threads (one per configured server slot)
//! consuming a shared inbound queue fed by per-connection reader threads.
//!
//! The entry component doubles as the orchestrator: it executes the
//! composition plan by calling downstream components over the same framed
//! protocol (sequentially for `seq` and tiered search, concurrently for
//! `par`), merging the timestamp entries each response carries. Every other
//! service simply works and responds to its caller.

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender, unbounded};
use ebf_core::component::{ComponentSpec, RequestClass};
use ebf_core::time::Ns;
use ebf_core::topology::{Plan, Topology};
use ebf_kernels::{KernelInputs, KernelSpec, execute as run_kernel_once};
use ebf_simengine::{TieredCursor, resolve_weighted, sample_service_time, sample_yield};
use ebf_workload::rng::substream;
use log::{debug, info, warn};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

use crate::NetError;
use crate::clock::monotonic_ns;
use crate::frame::{
    FLAG_QUOTA_SHORTFALL, Frame, MsgType, STATUS_DOWNSTREAM_UNREACHABLE, STATUS_OK, TsEntry,
    read_frame, write_frame,
};

/// What a worker does for the sampled service duration.
#[derive(Clone, Debug)]
pub enum WorkMode {
    /// Sleep for the sampled duration (cheap, understates CPU contention).
    Sleep,
    /// Busy-wait for the sampled duration.
    Spin,
    /// Run a compute kernel once; its natural runtime is the service time.
    Kernel(KernelSpec),
}

/// Everything one service process needs: its component spec, where to
/// listen, the topology when it orchestrates (entry component), and the
/// addresses of every downstream component.
pub struct ServiceRuntime {
    pub component: ComponentSpec,
    pub listen: SocketAddr,
    /// `Some` makes this service the plan orchestrator.
    pub topology: Option<Arc<Topology>>,
    pub addresses: BTreeMap<String, SocketAddr>,
    pub work: WorkMode,
    pub rpc_timeout: Duration,
    pub seed: u64,
}

struct Job {
    frame: Frame,
    enqueue_ns: Ns,
    conn: Arc<Mutex<TcpStream>>,
}

struct ServiceState {
    component: ComponentSpec,
    own_hash: u64,
    topology: Option<Arc<Topology>>,
    addresses: BTreeMap<String, SocketAddr>,
    work: WorkMode,
    kernel_inputs: Option<KernelInputs>,
    rpc_timeout: Duration,
    shutdown: AtomicBool,
}

pub struct ServiceHandle {
    local_addr: SocketAddr,
    state: Arc<ServiceState>,
    threads: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(&mut self) {
        self.state.shutdown.store(true, Ordering::SeqCst);
        // Wake the blocking acceptor so it can observe the flag.
        let _ = TcpStream::connect_timeout(&self.local_addr, Duration::from_millis(200));
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds the listener and starts the acceptor plus `servers` worker threads.
/// `--listen 127.0.0.1:0` style addresses work; the bound address is on the
/// returned handle.
pub fn spawn_service(rt: ServiceRuntime) -> Result<ServiceHandle, NetError> {
    let kernel_inputs = match &rt.work {
        WorkMode::Kernel(spec) => Some(KernelInputs::generate(spec)?),
        _ => None,
    };
    let listener = TcpListener::bind(rt.listen).map_err(|source| NetError::ConnectFailed {
        addr: rt.listen,
        source,
    })?;
    let local_addr = listener.local_addr()?;

    let state = Arc::new(ServiceState {
        own_hash: Frame::component_hash(&rt.component.id),
        component: rt.component,
        topology: rt.topology,
        addresses: rt.addresses,
        work: rt.work,
        kernel_inputs,
        rpc_timeout: rt.rpc_timeout,
        shutdown: AtomicBool::new(false),
    });

    let (tx, rx): (Sender<Job>, Receiver<Job>) = unbounded();
    let mut threads = Vec::new();

    {
        let state = state.clone();
        threads.push(thread::spawn(move || accept_loop(listener, state, tx)));
    }
    for worker in 0..state.component.servers {
        let state = state.clone();
        let rx = rx.clone();
        let rng = substream(rt.seed, "worker", u64::from(worker));
        threads.push(thread::spawn(move || worker_loop(state, rx, rng)));
    }
    info!(
        "component '{}' serving on {} with {} worker(s)",
        state.component.id, local_addr, state.component.servers
    );
    Ok(ServiceHandle {
        local_addr,
        state,
        threads,
    })
}

fn accept_loop(listener: TcpListener, state: Arc<ServiceState>, tx: Sender<Job>) {
    // Blocking accept; shutdown() wakes it with a throwaway connection.
    loop {
        match listener.accept() {
            Ok((stream, peer)) => {
                if state.shutdown.load(Ordering::SeqCst) {
                    return;
                }
                debug!("component '{}' accepted {}", state.component.id, peer);
                let state = state.clone();
                let tx = tx.clone();
                thread::spawn(move || reader_loop(stream, state, tx));
            }
            Err(e) => {
                if state.shutdown.load(Ordering::SeqCst) {
                    return;
                }
                warn!("accept failed on '{}': {e}", state.component.id);
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
}

fn reader_loop(stream: TcpStream, state: Arc<ServiceState>, tx: Sender<Job>) {
    if stream
        .set_read_timeout(Some(Duration::from_millis(100)))
        .is_err()
    {
        return;
    }
    let mut reader = match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    };
    let conn = Arc::new(Mutex::new(stream));
    loop {
        if state.shutdown.load(Ordering::SeqCst) {
            return;
        }
        match read_frame(&mut reader) {
            Ok(frame) => match frame.msg_type {
                MsgType::Health => {
                    let mut guard = conn.lock().expect("conn lock");
                    let _ = write_frame(&mut *guard, &Frame::health());
                }
                MsgType::Request | MsgType::Forward => {
                    let job = Job {
                        frame,
                        enqueue_ns: monotonic_ns(),
                        conn: conn.clone(),
                    };
                    if tx.send(job).is_err() {
                        return;
                    }
                }
                MsgType::Response => {
                    warn!(
                        "component '{}' received a stray response frame",
                        state.component.id
                    );
                }
            },
            Err(e) if e.is_timeout() => continue,
            Err(crate::frame::FrameError::Io(_)) => return, // peer closed
            Err(e) => {
                // Corrupt framing: log the diagnostic and close the
                // connection.
                warn!("component '{}' closing connection: {e}", state.component.id);
                return;
            }
        }
    }
}

fn worker_loop(state: Arc<ServiceState>, rx: Receiver<Job>, mut rng: Pcg64) {
    loop {
        if state.shutdown.load(Ordering::SeqCst) {
            return;
        }
        let Ok(job) = rx.recv_timeout(Duration::from_millis(100)) else {
            continue;
        };
        process_job(&state, job, &mut rng);
    }
}

/// OS sleeps overshoot by a scheduler tick; sleep short of the target and
/// spin the remainder so service durations track their samples.
const SLEEP_SLACK_NS: u64 = 1_000_000;

fn wait_until(target_ns: u64) {
    loop {
        let now = monotonic_ns();
        if now >= target_ns {
            return;
        }
        let remaining = target_ns - now;
        if remaining > SLEEP_SLACK_NS {
            thread::sleep(Duration::from_nanos(remaining - SLEEP_SLACK_NS));
        } else {
            std::hint::spin_loop();
        }
    }
}

fn do_service_work(state: &ServiceState, rng: &mut Pcg64) {
    match &state.work {
        WorkMode::Sleep => {
            let dur = sample_service_time(&state.component.service, rng);
            wait_until(monotonic_ns() + dur);
        }
        WorkMode::Spin => {
            let dur = sample_service_time(&state.component.service, rng);
            let target = monotonic_ns() + dur;
            while monotonic_ns() < target {
                std::hint::spin_loop();
            }
        }
        WorkMode::Kernel(spec) => {
            let inputs = state.kernel_inputs.as_ref().expect("prepared at spawn");
            if let Ok(out) = run_kernel_once(spec, inputs) {
                std::hint::black_box(out);
            }
        }
    }
}

fn process_job(state: &ServiceState, job: Job, rng: &mut Pcg64) {
    let start_ns = monotonic_ns();
    do_service_work(state, rng);
    let end_ns = monotonic_ns();
    let own_entry = TsEntry {
        component_hash: state.own_hash,
        enqueue_ns: job.enqueue_ns,
        start_ns,
        end_ns,
    };

    let response = match &state.topology {
        None => {
            // Leaf service: echo the entries we were handed plus our own.
            let mut resp = Frame::response(job.frame.request_id, job.frame.class, STATUS_OK, 0, "");
            resp.timestamps = job.frame.timestamps.clone();
            resp.timestamps.push(own_entry);
            resp
        }
        Some(topology) => {
            let class = if job.frame.class == 0 {
                RequestClass::Text
            } else {
                RequestClass::Image
            };
            let ctx = PlanCtx {
                state,
                request_id: job.frame.request_id,
                class,
                class_byte: job.frame.class,
                own_entry,
            };
            match ctx.exec(topology.plan(), rng) {
                Ok((mut entries, flags)) => {
                    if !entries.iter().any(|e| e.component_hash == state.own_hash) {
                        entries.insert(0, own_entry);
                    }
                    let mut resp = Frame::response(
                        job.frame.request_id,
                        job.frame.class,
                        STATUS_OK,
                        flags,
                        "",
                    );
                    resp.timestamps = entries;
                    resp
                }
                Err(failed) => {
                    let mut resp = Frame::response(
                        job.frame.request_id,
                        job.frame.class,
                        STATUS_DOWNSTREAM_UNREACHABLE,
                        0,
                        &failed,
                    );
                    resp.timestamps = vec![own_entry];
                    resp
                }
            }
        }
    };

    let mut guard = job.conn.lock().expect("conn lock");
    if let Err(e) = write_frame(&mut *guard, &response) {
        debug!("component '{}' failed to respond: {e}", state.component.id);
    }
}

struct PlanCtx<'a> {
    state: &'a ServiceState,
    request_id: u64,
    class: RequestClass,
    class_byte: u8,
    own_entry: TsEntry,
}

impl PlanCtx<'_> {
    /// Walks the plan, returning every downstream timestamp entry in plan
    /// order plus response flags. An unreachable downstream aborts with its
    /// component id.
    fn exec(&self, plan: &Plan, rng: &mut Pcg64) -> Result<(Vec<TsEntry>, u8), String> {
        match plan {
            Plan::Station(id) => {
                if *id == self.state.component.id {
                    Ok((vec![self.own_entry], 0))
                } else {
                    Ok((self.rpc(id)?, 0))
                }
            }
            Plan::Seq(children) => {
                let mut all = Vec::new();
                let mut flags = 0;
                for child in children {
                    let (entries, f) = self.exec(child, rng)?;
                    all.extend(entries);
                    flags |= f;
                }
                Ok((all, flags))
            }
            Plan::Par(children) => {
                // Fan out, barrier join, merge in child order.
                let results: Vec<Result<(Vec<TsEntry>, u8), String>> = thread::scope(|scope| {
                    let handles: Vec<_> = children
                        .iter()
                        .map(|child| {
                            let mut forked = Pcg64::seed_from_u64(rng.random());
                            scope.spawn(move || self.exec(child, &mut forked))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("par worker panicked"))
                        .collect()
                });
                let mut all = Vec::new();
                let mut flags = 0;
                for r in results {
                    let (entries, f) = r?;
                    all.extend(entries);
                    flags |= f;
                }
                Ok((all, flags))
            }
            Plan::BranchClass { text, image } => match self.class {
                RequestClass::Text => self.exec(text, rng),
                RequestClass::Image => self.exec(image, rng),
            },
            Plan::BranchWeighted(arms) => {
                let chosen = resolve_weighted(arms, rng);
                self.exec(chosen, rng)
            }
            Plan::Tiered { quota, tiers } => {
                let mut cursor = TieredCursor::new(*quota, tiers.len());
                let mut all = Vec::new();
                while let Some(tier) = cursor.next_probe() {
                    all.extend(self.rpc(&tiers[tier].station)?);
                    cursor.record_yield(sample_yield(&tiers[tier].yields, rng));
                }
                let flags = if cursor.shortfall() {
                    FLAG_QUOTA_SHORTFALL
                } else {
                    0
                };
                Ok((all, flags))
            }
            Plan::Module { inner, .. } => self.exec(inner, rng),
            Plan::Ref(_) => unreachable!("references are resolved by validation"),
        }
    }

    fn rpc(&self, component: &str) -> Result<Vec<TsEntry>, String> {
        let Some(addr) = self.state.addresses.get(component) else {
            return Err(component.to_string());
        };
        let attempt = || -> Result<Vec<TsEntry>, std::io::Error> {
            let mut stream = TcpStream::connect_timeout(addr, self.state.rpc_timeout)?;
            stream.set_read_timeout(Some(self.state.rpc_timeout))?;
            stream.set_write_timeout(Some(self.state.rpc_timeout))?;
            stream.set_nodelay(true)?;
            write_frame(
                &mut stream,
                &Frame::request(self.request_id, self.class_byte, Vec::new()),
            )?;
            let resp = read_frame(&mut stream).map_err(|e| match e {
                crate::frame::FrameError::Io(io) => io,
                other => std::io::Error::other(other.to_string()),
            })?;
            if resp.status() != STATUS_OK {
                return Err(std::io::Error::other(format!("status {}", resp.status())));
            }
            Ok(resp.timestamps)
        };
        attempt().map_err(|e| {
            debug!("rpc to '{component}' failed: {e}");
            component.to_string()
        })
    }
}
