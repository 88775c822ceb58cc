//! The discrete-event core: a time-ordered event queue (ties broken by
//! insertion sequence, so simultaneous events replay identically), stations
//! with k servers and FIFO queues, and a per-request interpreter that walks
//! the composition plan and assembles the span tree.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::sync::Arc;

use ebf_core::component::{RequestClass, ServiceTimeModel};
use ebf_core::time::Ns;
use ebf_core::topology::{Plan, ROOT_SPAN_LABEL, Tier, Topology};
use ebf_core::trace::{RequestTrace, Span, TraceSink, VecSink};
use ebf_workload::rng::substream;
use ebf_workload::{ArrivalEvent, LoopMode, StopRule, UserState, WorkloadError, WorkloadSpec};
use rand_pcg::Pcg64;
use thiserror::Error;

use crate::exec::{TieredCursor, resolve_weighted};
use crate::sample::{sample_service_time, sample_yield};
use crate::stats::{RunStats, StationStats, UNSTABLE_UTILIZATION};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("training load names unknown station '{0}'")]
    UnknownTrainingStation(String),
}

/// Periodic model-update work injected into a station: every `interval_ns`
/// one training job occupies a server for `cost_ns`, competing FIFO with
/// request traffic.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingLoad {
    pub station: String,
    pub interval_ns: Ns,
    pub cost_ns: Ns,
}

/// A configured simulation, ready to run against one or more sinks.
pub struct Simulation<'a> {
    topology: &'a Topology,
    workload: &'a WorkloadSpec,
    training: Option<TrainingLoad>,
}

impl<'a> Simulation<'a> {
    pub fn new(topology: &'a Topology, workload: &'a WorkloadSpec) -> Self {
        Simulation {
            topology,
            workload,
            training: None,
        }
    }

    pub fn with_training(mut self, training: TrainingLoad) -> Self {
        self.training = Some(training);
        self
    }

    pub fn run(&self, sink: &mut dyn TraceSink) -> Result<RunStats, SimError> {
        Engine::new(self.topology, self.workload, self.training.clone(), sink)?.run()
    }
}

/// Runs a workload against a topology, pushing every produced trace (warm-up
/// included) into `sink`.
pub fn run(
    topology: &Topology,
    workload: &WorkloadSpec,
    sink: &mut dyn TraceSink,
) -> Result<RunStats, SimError> {
    Simulation::new(topology, workload).run(sink)
}

/// Convenience wrapper collecting all traces in memory.
pub fn run_collect(
    topology: &Topology,
    workload: &WorkloadSpec,
) -> Result<(Vec<RequestTrace>, RunStats), SimError> {
    let mut sink = VecSink::default();
    let stats = run(topology, workload, &mut sink)?;
    Ok((sink.0, stats))
}

enum EventKind {
    Inject {
        arrival: ArrivalEvent,
        user: Option<u32>,
    },
    ServiceEnd {
        station: usize,
        job: Job,
    },
    TrainingArrive,
}

struct Event {
    time: Ns,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we need earliest-first with
        // FIFO tie-breaking on the insertion sequence number.
        other
            .time
            .cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Job {
    owner: JobOwner,
    enqueue_ns: Ns,
    start_ns: Ns,
}

enum JobOwner {
    Request { request_id: u64, frame: usize },
    Training { cost_ns: Ns },
}

struct Station {
    name: Arc<str>,
    servers: u32,
    busy: u32,
    queue: VecDeque<Job>,
    model: ServiceTimeModel,
    rng: Pcg64,
    jobs_started: u64,
    busy_integral_ns: u128,
    last_change_ns: Ns,
}

impl Station {
    /// Folds the busy-server area since the last state change into the
    /// measured-window integral, clipping at the warm-up boundary.
    fn settle(&mut self, now: Ns, warmup: Ns) {
        let from = self.last_change_ns.max(warmup);
        if now > from {
            self.busy_integral_ns += u128::from(self.busy) * u128::from(now - from);
        }
        self.last_change_ns = now;
    }
}

enum FrameState<'a> {
    StationLeaf,
    Seq {
        children: &'a [Plan],
        next: usize,
        spans: Vec<Span>,
    },
    Par {
        slots: Vec<Option<Vec<Span>>>,
        outstanding: usize,
    },
    Branch,
    Module {
        label: &'a str,
    },
    Tiered {
        tiers: &'a [Tier],
        cursor: TieredCursor,
        spans: Vec<Span>,
    },
}

struct Frame<'a> {
    parent: Option<usize>,
    slot: usize,
    state: FrameState<'a>,
}

struct ReqExec<'a> {
    class: RequestClass,
    arrival_ns: Ns,
    user: Option<u32>,
    frames: Vec<Frame<'a>>,
}

enum Dispatch<'a> {
    StartChild {
        plan: &'a Plan,
        parent: usize,
        slot: usize,
    },
    ProbeTier {
        parent: usize,
        tier: usize,
        station: usize,
    },
    Ascend(Vec<Span>),
    Wait,
}

struct Engine<'a> {
    topology: &'a Topology,
    workload: &'a WorkloadSpec,
    sink: &'a mut dyn TraceSink,

    now_ns: Ns,
    events: BinaryHeap<Event>,
    seq: u64,

    stations: Vec<Station>,
    labels: HashMap<&'a str, Arc<str>>,
    root_label: Arc<str>,

    requests: HashMap<u64, ReqExec<'a>>,
    users: Vec<UserState>,
    next_request_id: u64,
    pending_arrivals: std::vec::IntoIter<ArrivalEvent>,

    branch_rng: Pcg64,
    tiered_rng: Pcg64,

    training: Option<TrainingLoad>,
    training_station: usize,
    training_cutoff: Ns,

    // Accounting.
    injected: u64,
    completed_measured: u64,
    discarded_warmup: u64,
    active: u64,
    sum_e2e_measured_ns: u128,
    quota_shortfalls: u64,
    training_runs: u64,
    jobs_integral: f64,
    last_activity_ns: Ns,
    stop: bool,
}

impl<'a> Engine<'a> {
    fn new(
        topology: &'a Topology,
        workload: &'a WorkloadSpec,
        training: Option<TrainingLoad>,
        sink: &'a mut dyn TraceSink,
    ) -> Result<Self, SimError> {
        workload.validate()?;
        let seed = workload.seed;
        let stations = topology
            .components()
            .iter()
            .enumerate()
            .map(|(idx, c)| Station {
                name: Arc::from(c.id.as_str()),
                servers: c.servers,
                busy: 0,
                queue: VecDeque::new(),
                model: c.service.clone(),
                rng: substream(seed, "station", idx as u64),
                jobs_started: 0,
                busy_integral_ns: 0,
                last_change_ns: 0,
            })
            .collect();
        let training_station = match &training {
            Some(t) => topology
                .component_index(&t.station)
                .ok_or_else(|| SimError::UnknownTrainingStation(t.station.clone()))?,
            None => 0,
        };
        let mut engine = Engine {
            topology,
            workload,
            sink,
            now_ns: 0,
            events: BinaryHeap::new(),
            seq: 0,
            stations,
            labels: HashMap::new(),
            root_label: Arc::from(ROOT_SPAN_LABEL),
            requests: HashMap::new(),
            users: Vec::new(),
            next_request_id: 0,
            pending_arrivals: Vec::new().into_iter(),
            branch_rng: substream(seed, "branch", 0),
            tiered_rng: substream(seed, "tiered", 0),
            training,
            training_station,
            training_cutoff: 0,
            injected: 0,
            completed_measured: 0,
            discarded_warmup: 0,
            active: 0,
            sum_e2e_measured_ns: 0,
            quota_shortfalls: 0,
            training_runs: 0,
            jobs_integral: 0.0,
            last_activity_ns: 0,
            stop: false,
        };
        engine.schedule_workload()?;
        engine.schedule_training();
        Ok(engine)
    }

    fn schedule_workload(&mut self) -> Result<(), SimError> {
        match self.workload.mode {
            LoopMode::Open { .. } => {
                let arrivals = ebf_workload::gen_open_loop(self.workload)?;
                self.training_cutoff = arrivals.last().map_or(0, |a| a.scheduled_ns);
                self.pending_arrivals = arrivals.into_iter();
                self.schedule_next_open_arrival();
            }
            LoopMode::Closed {
                users,
                think_time_mean_ns,
            } => {
                self.training_cutoff = match self.workload.stop {
                    StopRule::Duration(d) => d,
                    StopRule::Requests(_) => Ns::MAX,
                };
                self.users = (0..users)
                    .map(|u| UserState::new(self.workload.seed, u))
                    .collect();
                for u in 0..users {
                    let id = self.next_request_id;
                    self.next_request_id += 1;
                    let arrival = self.users[u as usize].first_arrival(
                        think_time_mean_ns,
                        self.workload.fraction_text,
                        id,
                    );
                    self.push_event(
                        arrival.scheduled_ns,
                        EventKind::Inject {
                            arrival,
                            user: Some(u),
                        },
                    );
                }
            }
        }
        Ok(())
    }

    fn schedule_next_open_arrival(&mut self) {
        if let Some(arrival) = self.pending_arrivals.next() {
            self.push_event(
                arrival.scheduled_ns,
                EventKind::Inject {
                    arrival,
                    user: None,
                },
            );
        }
    }

    fn schedule_training(&mut self) {
        if let Some(t) = &self.training
            && t.interval_ns > 0
            && t.interval_ns <= self.training_cutoff
        {
            let at = t.interval_ns;
            self.push_event(at, EventKind::TrainingArrive);
        }
    }

    fn push_event(&mut self, time: Ns, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.events.push(Event { time, seq, kind });
    }

    fn run(mut self) -> Result<RunStats, SimError> {
        // Closed-loop duration runs cut at the horizon; open-loop runs drain
        // (their arrival stream is already bounded by the stop rule).
        let hard_horizon = match (&self.workload.mode, self.workload.stop) {
            (LoopMode::Closed { .. }, StopRule::Duration(d)) => Some(d),
            _ => None,
        };
        while let Some(event) = self.events.pop() {
            if let Some(h) = hard_horizon
                && event.time > h
            {
                self.note_activity(h);
                self.now_ns = h;
                break;
            }
            self.now_ns = event.time;
            match event.kind {
                EventKind::Inject { arrival, user } => self.inject(arrival, user),
                EventKind::ServiceEnd { station, job } => self.service_end(station, job),
                EventKind::TrainingArrive => self.training_arrive(),
            }
            if self.stop {
                break;
            }
        }
        let horizon = self.now_ns;
        self.note_activity(horizon);
        for st in &mut self.stations {
            st.settle(horizon, self.workload.warmup_ns);
        }

        let window_ns = horizon.saturating_sub(self.workload.warmup_ns);
        let window_secs = window_ns as f64 / 1e9;
        let lambda = if window_ns > 0 {
            self.completed_measured as f64 / window_secs
        } else {
            0.0
        };
        let mut warnings = Vec::new();
        let stations: Vec<StationStats> = self
            .stations
            .iter()
            .map(|st| {
                let capacity = u128::from(st.servers) * u128::from(window_ns);
                let utilization = if capacity > 0 {
                    st.busy_integral_ns as f64 / capacity as f64
                } else {
                    0.0
                };
                if utilization > UNSTABLE_UTILIZATION {
                    warnings.push(format!(
                        "station '{}' utilization {utilization:.3} exceeds {UNSTABLE_UTILIZATION} \
                         over the measured window; the system is likely unstable at this load",
                        st.name
                    ));
                }
                StationStats {
                    id: st.name.to_string(),
                    servers: st.servers,
                    jobs_started: st.jobs_started,
                    utilization,
                }
            })
            .collect();

        Ok(RunStats {
            injected: self.injected,
            completed_measured: self.completed_measured,
            discarded_warmup: self.discarded_warmup,
            in_flight_at_end: self.active,
            quota_shortfalls: self.quota_shortfalls,
            training_runs: self.training_runs,
            horizon_ns: horizon,
            warmup_ns: self.workload.warmup_ns,
            lambda_measured_per_sec: lambda,
            mean_e2e_measured_ns: if self.completed_measured > 0 {
                self.sum_e2e_measured_ns as f64 / self.completed_measured as f64
            } else {
                0.0
            },
            time_avg_jobs: if window_ns > 0 {
                self.jobs_integral / window_ns as f64
            } else {
                0.0
            },
            stations,
            warnings,
        })
    }

    /// Folds the jobs-in-system area since the last change into the integral,
    /// clipped to the measured window.
    fn note_activity(&mut self, now: Ns) {
        let from = self.last_activity_ns.max(self.workload.warmup_ns);
        if now > from {
            self.jobs_integral += self.active as f64 * (now - from) as f64;
        }
        self.last_activity_ns = now;
    }

    fn inject(&mut self, arrival: ArrivalEvent, user: Option<u32>) {
        self.note_activity(self.now_ns);
        self.active += 1;
        self.injected += 1;
        self.requests.insert(
            arrival.request_id,
            ReqExec {
                class: arrival.class,
                arrival_ns: arrival.scheduled_ns,
                user,
                frames: Vec::with_capacity(8),
            },
        );
        self.start_plan(arrival.request_id, self.topology.plan(), None, 0);
        if user.is_none() {
            self.schedule_next_open_arrival();
        }
    }

    fn start_plan(&mut self, request_id: u64, plan: &'a Plan, parent: Option<usize>, slot: usize) {
        match plan {
            Plan::Station(id) => {
                let station = self.topology.component_index(id).expect("validated id");
                let frame = self.push_frame(request_id, parent, slot, FrameState::StationLeaf);
                self.station_enqueue(station, JobOwner::Request { request_id, frame });
            }
            Plan::Seq(children) => {
                let frame = self.push_frame(
                    request_id,
                    parent,
                    slot,
                    FrameState::Seq {
                        children,
                        next: 0,
                        spans: Vec::new(),
                    },
                );
                self.start_plan(request_id, &children[0], Some(frame), 0);
            }
            Plan::Par(children) => {
                let frame = self.push_frame(
                    request_id,
                    parent,
                    slot,
                    FrameState::Par {
                        slots: vec![None; children.len()],
                        outstanding: children.len(),
                    },
                );
                for (i, child) in children.iter().enumerate() {
                    self.start_plan(request_id, child, Some(frame), i);
                }
            }
            Plan::BranchClass { text, image } => {
                let frame = self.push_frame(request_id, parent, slot, FrameState::Branch);
                let chosen = match self.requests[&request_id].class {
                    RequestClass::Text => text,
                    RequestClass::Image => image,
                };
                self.start_plan(request_id, chosen, Some(frame), 0);
            }
            Plan::BranchWeighted(arms) => {
                let frame = self.push_frame(request_id, parent, slot, FrameState::Branch);
                let chosen = resolve_weighted(arms, &mut self.branch_rng);
                self.start_plan(request_id, chosen, Some(frame), 0);
            }
            Plan::Tiered { quota, tiers } => {
                let cursor = TieredCursor::new(*quota, tiers.len());
                let first = cursor.next_probe();
                let frame = self.push_frame(
                    request_id,
                    parent,
                    slot,
                    FrameState::Tiered {
                        tiers,
                        cursor,
                        spans: Vec::new(),
                    },
                );
                match first {
                    Some(tier) => self.probe_tier(request_id, frame, tier),
                    // Quota zero never occurs in validated topologies, but the
                    // cursor handles it; complete with no spans.
                    None => self.complete_frame(request_id, frame, Vec::new()),
                }
            }
            Plan::Module { label, inner } => {
                let frame = self.push_frame(
                    request_id,
                    parent,
                    slot,
                    FrameState::Module {
                        label: label.as_str(),
                    },
                );
                self.start_plan(request_id, inner, Some(frame), 0);
            }
            Plan::Ref(_) => unreachable!("references are resolved by validation"),
        }
    }

    fn push_frame(
        &mut self,
        request_id: u64,
        parent: Option<usize>,
        slot: usize,
        state: FrameState<'a>,
    ) -> usize {
        let frames = &mut self
            .requests
            .get_mut(&request_id)
            .expect("live request")
            .frames;
        frames.push(Frame {
            parent,
            slot,
            state,
        });
        frames.len() - 1
    }

    fn probe_tier(&mut self, request_id: u64, tiered_frame: usize, tier: usize) {
        let station = {
            let exec = &self.requests[&request_id];
            let FrameState::Tiered { tiers, .. } = &exec.frames[tiered_frame].state else {
                unreachable!("probe_tier on a non-tiered frame");
            };
            self.topology
                .component_index(&tiers[tier].station)
                .expect("validated id")
        };
        let frame = self.push_frame(
            request_id,
            Some(tiered_frame),
            tier,
            FrameState::StationLeaf,
        );
        self.station_enqueue(station, JobOwner::Request { request_id, frame });
    }

    fn station_enqueue(&mut self, station: usize, owner: JobOwner) {
        self.stations[station].queue.push_back(Job {
            owner,
            enqueue_ns: self.now_ns,
            start_ns: 0,
        });
        self.try_start_service(station);
    }

    fn try_start_service(&mut self, station: usize) {
        let warmup = self.workload.warmup_ns;
        let st = &mut self.stations[station];
        let mut scheduled = Vec::new();
        while st.busy < st.servers {
            let Some(mut job) = st.queue.pop_front() else {
                break;
            };
            st.settle(self.now_ns, warmup);
            st.busy += 1;
            st.jobs_started += 1;
            job.start_ns = self.now_ns;
            let duration = match job.owner {
                JobOwner::Training { cost_ns } => cost_ns,
                JobOwner::Request { .. } => sample_service_time(&st.model, &mut st.rng),
            };
            scheduled.push((self.now_ns + duration, job));
        }
        for (end, job) in scheduled {
            self.push_event(end, EventKind::ServiceEnd { station, job });
        }
    }

    fn service_end(&mut self, station: usize, job: Job) {
        {
            let warmup = self.workload.warmup_ns;
            let st = &mut self.stations[station];
            st.settle(self.now_ns, warmup);
            st.busy -= 1;
        }
        self.try_start_service(station);
        match job.owner {
            JobOwner::Training { .. } => {
                self.training_runs += 1;
            }
            JobOwner::Request { request_id, frame } => {
                let span = Span::leaf(
                    self.stations[station].name.clone(),
                    job.enqueue_ns,
                    job.start_ns,
                    self.now_ns,
                );
                self.complete_frame(request_id, frame, vec![span]);
            }
        }
    }

    fn training_arrive(&mut self) {
        let Some(t) = self.training.clone() else {
            return;
        };
        self.station_enqueue(
            self.training_station,
            JobOwner::Training { cost_ns: t.cost_ns },
        );
        let next = self.now_ns + t.interval_ns;
        if next <= self.training_cutoff {
            self.push_event(next, EventKind::TrainingArrive);
        }
    }

    /// Propagates a completed frame's spans up the execution tree, starting
    /// follow-up work (next sequential child, next tier probe) as it goes.
    fn complete_frame(&mut self, request_id: u64, mut frame_idx: usize, mut spans: Vec<Span>) {
        loop {
            let (parent, slot) = {
                let exec = &self.requests[&request_id];
                (exec.frames[frame_idx].parent, exec.frames[frame_idx].slot)
            };
            let Some(parent_idx) = parent else {
                self.finish_request(request_id, spans);
                return;
            };

            let dispatch = {
                let tiered_rng = &mut self.tiered_rng;
                let exec = self.requests.get_mut(&request_id).expect("live request");
                match &mut exec.frames[parent_idx].state {
                    FrameState::Seq {
                        children,
                        next,
                        spans: acc,
                    } => {
                        acc.append(&mut spans);
                        *next += 1;
                        if *next < children.len() {
                            Dispatch::StartChild {
                                plan: &children[*next],
                                parent: parent_idx,
                                slot: 0,
                            }
                        } else {
                            Dispatch::Ascend(std::mem::take(acc))
                        }
                    }
                    FrameState::Par { slots, outstanding } => {
                        slots[slot] = Some(std::mem::take(&mut spans));
                        *outstanding -= 1;
                        if *outstanding == 0 {
                            // Flatten in child order, not completion order.
                            let all = slots
                                .iter_mut()
                                .flat_map(|s| s.take().unwrap_or_default())
                                .collect();
                            Dispatch::Ascend(all)
                        } else {
                            Dispatch::Wait
                        }
                    }
                    FrameState::Branch => Dispatch::Ascend(spans),
                    FrameState::Module { label } => {
                        let enqueue = spans.iter().map(|s| s.enqueue_ns).min().unwrap_or(0);
                        let end = spans.iter().map(|s| s.end_ns).max().unwrap_or(0);
                        let id = self
                            .labels
                            .entry(label)
                            .or_insert_with(|| Arc::from(*label))
                            .clone();
                        Dispatch::Ascend(vec![Span {
                            component_id: id,
                            enqueue_ns: enqueue,
                            start_ns: enqueue,
                            end_ns: end,
                            children: spans,
                        }])
                    }
                    FrameState::Tiered {
                        tiers,
                        cursor,
                        spans: acc,
                    } => {
                        let produced = sample_yield(&tiers[slot].yields, tiered_rng);
                        cursor.record_yield(produced);
                        acc.append(&mut spans);
                        if let Some(tier) = cursor.next_probe() {
                            let station = self
                                .topology
                                .component_index(&tiers[tier].station)
                                .expect("validated id");
                            Dispatch::ProbeTier {
                                parent: parent_idx,
                                tier,
                                station,
                            }
                        } else {
                            if cursor.shortfall() {
                                self.quota_shortfalls += 1;
                            }
                            Dispatch::Ascend(std::mem::take(acc))
                        }
                    }
                    FrameState::StationLeaf => unreachable!("leaf frames have no children"),
                }
            };

            match dispatch {
                Dispatch::Wait => return,
                Dispatch::StartChild { plan, parent, slot } => {
                    self.start_plan(request_id, plan, Some(parent), slot);
                    return;
                }
                Dispatch::ProbeTier {
                    parent,
                    tier,
                    station,
                } => {
                    let frame =
                        self.push_frame(request_id, Some(parent), tier, FrameState::StationLeaf);
                    self.station_enqueue(station, JobOwner::Request { request_id, frame });
                    return;
                }
                Dispatch::Ascend(all) => {
                    frame_idx = parent_idx;
                    spans = all;
                }
            }
        }
    }

    fn finish_request(&mut self, request_id: u64, spans: Vec<Span>) {
        let exec = self.requests.remove(&request_id).expect("live request");
        self.note_activity(self.now_ns);
        self.active -= 1;

        let measured = exec.arrival_ns >= self.workload.warmup_ns;
        if measured {
            self.completed_measured += 1;
            self.sum_e2e_measured_ns += u128::from(self.now_ns - exec.arrival_ns);
        } else {
            self.discarded_warmup += 1;
        }

        let trace = RequestTrace {
            request_id,
            class: exec.class,
            arrival_ns: exec.arrival_ns,
            completion_ns: self.now_ns,
            root_span: Span {
                component_id: self.root_label.clone(),
                enqueue_ns: exec.arrival_ns,
                start_ns: exec.arrival_ns,
                end_ns: self.now_ns,
                children: spans,
            },
            quality_achieved: None,
        };
        self.sink.accept(trace);

        if let Some(user) = exec.user {
            if let LoopMode::Closed {
                think_time_mean_ns, ..
            } = self.workload.mode
            {
                let id = self.next_request_id;
                self.next_request_id += 1;
                let arrival = self.users[user as usize].next_arrival(
                    self.now_ns,
                    think_time_mean_ns,
                    self.workload.fraction_text,
                    id,
                );
                self.push_event(
                    arrival.scheduled_ns,
                    EventKind::Inject {
                        arrival,
                        user: Some(user),
                    },
                );
            }
            if let StopRule::Requests(n) = self.workload.stop
                && measured
                && self.completed_measured >= n
            {
                self.stop = true;
            }
        }
    }
}
