use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EngineError, TraceEvent, TraceKind};
use crate::policies::{Decision, JobView, Observation, PolicyError, PolicyInstance, ReplicaView};
use crate::system::SystemConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Completion = 0,
    CancelEnd = 1,
    Arrival = 2,
    Wakeup = 3,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: EventKind,
    job: u64,
    server: usize,
    epoch: u64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap is a max-heap and we want the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.kind.cmp(&self.kind))
            .then(other.job.cmp(&self.job))
            .then(other.server.cmp(&self.server))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Occupant {
    Idle { since: f64 },
    Serving { job: u64, start: f64 },
    Cancelling { until: f64 },
}

#[derive(Debug, Clone)]
pub(crate) struct ServerState {
    pub occupant: Occupant,
    /// Bumped on every change so that superseded completions are ignored.
    pub epoch: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct Replica {
    pub server: usize,
    pub start: f64,
}

/// An in-flight job.
#[derive(Debug, Clone)]
pub(crate) struct JobRecord {
    pub arrival: f64,
    /// Active copies in launch order.
    pub replicas: Vec<Replica>,
}

/// What happened to one departed job.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Departure {
    pub time: f64,
    pub response: f64,
    pub computing: f64,
}

pub(crate) struct Sim<'a> {
    system: &'a SystemConfig,
    policy: &'a PolicyInstance,
    service_rng: ChaCha8Rng,
    arrival_rng: ChaCha8Rng,
    pub servers: Vec<ServerState>,
    pub jobs: BTreeMap<u64, JobRecord>,
    queue: VecDeque<(u64, f64)>,
    events: BinaryHeap<Event>,
    pub now: f64,
    next_id: u64,
    saturated: bool,
    next_wakeup: f64,
    pub departures: Vec<Departure>,
    pub trace: Option<Vec<TraceEvent>>,
    /// Longest stretch any server sat idle before its next assignment.
    pub max_idle_gap: f64,
    // Poisson bookkeeping
    lambda: f64,
    arrivals_left: usize,
    pub last_arrival: f64,
    pub queue_at_last_arrival: usize,
    pub served_at_last_arrival: usize,
    pub congested_time: f64,
    pub congested_departures: usize,
}

impl<'a> Sim<'a> {
    /// Service draws come from stream `2 * stream`, arrivals from `2 * stream + 1`.
    pub fn new(system: &'a SystemConfig, policy: &'a PolicyInstance, seed: u64, stream: u64) -> Self {
        let mut service_rng = ChaCha8Rng::seed_from_u64(seed);
        service_rng.set_stream(2 * stream);
        let mut arrival_rng = ChaCha8Rng::seed_from_u64(seed);
        arrival_rng.set_stream(2 * stream + 1);
        Self {
            system,
            policy,
            service_rng,
            arrival_rng,
            servers: (0..system.k())
                .map(|_| ServerState {
                    occupant: Occupant::Idle { since: 0.0 },
                    epoch: 0,
                })
                .collect(),
            jobs: BTreeMap::new(),
            queue: VecDeque::new(),
            events: BinaryHeap::new(),
            now: 0.0,
            next_id: 0,
            saturated: true,
            next_wakeup: f64::NEG_INFINITY,
            departures: Vec::new(),
            trace: None,
            max_idle_gap: 0.0,
            lambda: 0.0,
            arrivals_left: 0,
            last_arrival: 0.0,
            queue_at_last_arrival: 0,
            served_at_last_arrival: 0,
            congested_time: 0.0,
            congested_departures: 0,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn poisson(mut self, lambda: f64, jobs: usize) -> Self {
        self.saturated = false;
        self.lambda = lambda;
        self.arrivals_left = jobs;
        if jobs > 0 {
            self.schedule_arrival();
        }
        self
    }

    fn log(&mut self, kind: TraceKind, job: Option<u64>, server: Option<usize>, detail: String) {
        if let Some(t) = &mut self.trace {
            t.push(TraceEvent {
                time: self.now,
                kind,
                job,
                server,
                detail,
            });
        }
    }

    fn schedule_arrival(&mut self) {
        use rand::Rng;
        let u: f64 = 1.0 - self.arrival_rng.random::<f64>();
        let dt = -u.ln() / self.lambda;
        self.events.push(Event {
            time: self.now + dt,
            kind: EventKind::Arrival,
            job: 0,
            server: 0,
            epoch: 0,
        });
    }

    /// Advances until `stop` holds after a decision phase or events run out.
    pub fn run(&mut self, mut stop: impl FnMut(&Self) -> bool) -> Result<(), EngineError> {
        loop {
            self.assign()?;
            if stop(self) {
                return Ok(());
            }
            let Some(first) = self.events.pop() else {
                return Ok(());
            };
            let congested = !self.saturated && !self.queue.is_empty();
            if congested {
                self.congested_time += first.time - self.now;
            }
            let served_before = self.departures.len();
            self.now = first.time;
            self.handle(first)?;
            while let Some(ev) = self.events.peek() {
                if ev.time != self.now {
                    break;
                }
                let ev = self.events.pop().unwrap();
                self.handle(ev)?;
            }
            if congested {
                self.congested_departures += self.departures.len() - served_before;
            }
        }
    }

    fn handle(&mut self, ev: Event) -> Result<(), EngineError> {
        match ev.kind {
            EventKind::Completion => {
                let s = &self.servers[ev.server];
                if s.epoch != ev.epoch {
                    return Ok(());
                }
                self.depart(ev.job, ev.server);
            }
            EventKind::CancelEnd => {
                if self.servers[ev.server].epoch != ev.epoch {
                    return Ok(());
                }
                self.set(ev.server, Occupant::Idle { since: self.now });
                self.log(TraceKind::CancelEnd, None, Some(ev.server), String::new());
            }
            EventKind::Arrival => {
                let id = self.next_id;
                self.next_id += 1;
                self.queue.push_back((id, self.now));
                self.arrivals_left -= 1;
                self.log(TraceKind::Arrival, Some(id), None, String::new());
                if self.arrivals_left > 0 {
                    self.schedule_arrival();
                } else {
                    self.last_arrival = self.now;
                    self.served_at_last_arrival = self.departures.len();
                    // measured after this instant's assignments below
                    self.queue_at_last_arrival = usize::MAX;
                }
            }
            EventKind::Wakeup => {
                self.log(TraceKind::Wakeup, None, None, String::new());
            }
        }
        Ok(())
    }

    fn set(&mut self, server: usize, occupant: Occupant) {
        let s = &mut self.servers[server];
        s.occupant = occupant;
        s.epoch += 1;
    }

    fn depart(&mut self, job: u64, finisher: usize) {
        let rec = self.jobs.remove(&job).expect("completion of a live job");
        let delta = self.system.delta;
        let n = rec.replicas.len();
        let cancel = n >= 2 && delta > 0.0;
        let mut computing = 0.0;
        for r in &rec.replicas {
            computing += self.now - r.start;
            if cancel {
                computing += delta;
                let until = self.now + delta;
                self.set(r.server, Occupant::Cancelling { until });
                let epoch = self.servers[r.server].epoch;
                self.events.push(Event {
                    time: until,
                    kind: EventKind::CancelEnd,
                    job,
                    server: r.server,
                    epoch,
                });
            } else {
                self.set(r.server, Occupant::Idle { since: self.now });
            }
        }
        self.departures.push(Departure {
            time: self.now,
            response: self.now - rec.arrival,
            computing,
        });
        self.log(
            TraceKind::Departure,
            Some(job),
            Some(finisher),
            format!("copies={n}"),
        );
    }

    fn start_replica(&mut self, job: u64, server: usize, new: bool) {
        let x = self.system.servers[server].sample(&mut self.service_rng);
        let rec = self.jobs.get_mut(&job).expect("live job");
        let elapsed = rec.replicas.first().map_or(0.0, |r| self.now - r.start);
        rec.replicas.push(Replica {
            server,
            start: self.now,
        });
        if let Occupant::Idle { since } = self.servers[server].occupant {
            self.max_idle_gap = self.max_idle_gap.max(self.now - since);
        }
        self.set(server, Occupant::Serving { job, start: self.now });
        let epoch = self.servers[server].epoch;
        self.events.push(Event {
            time: self.now + x,
            kind: EventKind::Completion,
            job,
            server,
            epoch,
        });
        if new {
            self.log(TraceKind::StartNew, Some(job), Some(server), String::new());
        } else {
            self.log(
                TraceKind::StartReplica,
                Some(job),
                Some(server),
                format!("elapsed={elapsed}"),
            );
        }
    }

    fn job_views(&self) -> Vec<JobView> {
        self.jobs
            .iter()
            .map(|(&id, rec)| JobView {
                id,
                replicas: rec
                    .replicas
                    .iter()
                    .map(|r| ReplicaView {
                        server: r.server,
                        elapsed: self.now - r.start,
                    })
                    .collect(),
            })
            .collect()
    }

    fn idle_servers(&self) -> Vec<usize> {
        self.servers
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s.occupant, Occupant::Idle { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Offers idle servers to the policy, lowest index first, until a full
    /// pass changes nothing.
    fn assign(&mut self) -> Result<(), EngineError> {
        let mut recheck = f64::INFINITY;
        loop {
            let mut changed = false;
            for server in self.idle_servers() {
                if !matches!(self.servers[server].occupant, Occupant::Idle { .. }) {
                    continue;
                }
                let idle = self.idle_servers();
                let jobs = self.job_views();
                let cancelling: Vec<(usize, f64)> = self
                    .servers
                    .iter()
                    .enumerate()
                    .filter_map(|(i, s)| match s.occupant {
                        Occupant::Cancelling { until } => Some((i, until - self.now)),
                        _ => None,
                    })
                    .collect();
                let obs = Observation {
                    now: self.now,
                    idle_server: server,
                    idle_servers: &idle,
                    jobs: &jobs,
                    cancelling: &cancelling,
                    new_job_available: self.saturated || !self.queue.is_empty(),
                    system: self.system,
                };
                match self.policy.decide(&obs)? {
                    Decision::New => {
                        let (id, arrival) = if self.saturated {
                            let id = self.next_id;
                            self.next_id += 1;
                            (id, self.now)
                        } else {
                            self.queue.pop_front().ok_or_else(|| {
                                PolicyError::InconsistentObservation("new job requested from an empty queue".into())
                            })?
                        };
                        self.jobs.insert(
                            id,
                            JobRecord {
                                arrival,
                                replicas: Vec::new(),
                            },
                        );
                        self.start_replica(id, server, true);
                        changed = true;
                    }
                    Decision::Rep(id) => {
                        match self.jobs.get(&id) {
                            None => {
                                return Err(PolicyError::InconsistentObservation(format!(
                                    "replica of job {id}, which has no active copy"
                                ))
                                .into())
                            }
                            Some(rec) if rec.replicas.iter().any(|r| r.server == server) => {
                                return Err(PolicyError::InconsistentObservation(format!(
                                    "job {id} already runs on server {server}"
                                ))
                                .into())
                            }
                            Some(_) => {}
                        }
                        self.start_replica(id, server, false);
                        changed = true;
                    }
                    Decision::Wait { recheck_after } => {
                        if let Some(dt) = recheck_after {
                            recheck = recheck.min(dt.max(0.0));
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if self.queue_at_last_arrival == usize::MAX {
            self.queue_at_last_arrival = self.queue.len();
        }
        if recheck.is_finite() {
            let at = self.now + recheck;
            if !(self.next_wakeup > self.now && self.next_wakeup <= at) {
                self.next_wakeup = at;
                self.events.push(Event {
                    time: at,
                    kind: EventKind::Wakeup,
                    job: 0,
                    server: 0,
                    epoch: 0,
                });
            }
        }
        Ok(())
    }
}
