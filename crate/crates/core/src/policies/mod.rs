//! Replication decision rules.
//!
//! Whenever a server is idle, the simulator (or the MDP builder) describes
//! the system through an [`Observation`] and asks a [`PolicyInstance`] for a
//! [`Decision`]: start a new job, replicate an in-flight job, or leave the
//! server idle for now.

mod parse;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::analytic::{Partition, TIE_TOL};
use crate::dist::{min_expectation, DistError, ResidualDistribution, ServiceDistribution, TailLaw};
use crate::grammar::fmt_num;
use crate::mdp::TabularPolicy;
use crate::system::SystemConfig;

pub use parse::parse_policy;

/// Slack added to elapsed times before comparing with thresholds, so that
/// event times assembled from float sums still fire on exact lattice points.
pub const THRESHOLD_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("inconsistent observation: {0}")]
    InconsistentObservation(String),
    #[error("cannot parse policy: {0}")]
    Parse(String),
    #[error("policy does not fit a {k}-server system: {msg}")]
    Mismatch { k: usize, msg: String },
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// One running copy of a job.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaView {
    pub server: usize,
    pub elapsed: f64,
}

/// An in-flight job as seen by a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct JobView {
    pub id: u64,
    /// Active copies in launch order; the first is the original.
    pub replicas: Vec<ReplicaView>,
}

impl JobView {
    /// Time the original copy has spent in service.
    pub fn original_elapsed(&self) -> f64 {
        self.replicas[0].elapsed
    }

    /// Servers in launch order: the replication history of the job.
    pub fn history(&self) -> Vec<usize> {
        self.replicas.iter().map(|r| r.server).collect()
    }

    pub fn runs_on(&self, server: usize) -> bool {
        self.replicas.iter().any(|r| r.server == server)
    }
}

#[derive(Debug, Clone)]
pub struct Observation<'a> {
    pub now: f64,
    /// The server being offered.
    pub idle_server: usize,
    /// Every idle server at this instant, ascending; contains `idle_server`.
    pub idle_servers: &'a [usize],
    pub jobs: &'a [JobView],
    /// Servers inside a cancellation window, with the time left in it.
    pub cancelling: &'a [(usize, f64)],
    /// Whether a job is waiting in the central queue.
    pub new_job_available: bool,
    pub system: &'a SystemConfig,
}

impl Observation<'_> {
    fn validate(&self) -> Result<(), PolicyError> {
        let k = self.system.k();
        let bad = |m: String| Err(PolicyError::InconsistentObservation(m));
        if self.idle_server >= k {
            return bad(format!("idle server {} out of range", self.idle_server));
        }
        if !self.idle_servers.contains(&self.idle_server) {
            return bad("offered server missing from the idle set".into());
        }
        let mut busy = vec![false; k];
        for j in self.jobs {
            if j.replicas.is_empty() {
                return bad(format!("job {} has no active copy", j.id));
            }
            for r in &j.replicas {
                if r.server >= k || busy[r.server] {
                    return bad(format!("job {} uses server {} twice or out of range", j.id, r.server));
                }
                if !(r.elapsed >= 0.0) {
                    return bad(format!("job {} has negative elapsed time", j.id));
                }
                busy[r.server] = true;
            }
        }
        if self.idle_servers.iter().any(|&s| s >= k || busy[s]) {
            return bad("an idle server hosts a replica".into());
        }
        for &(s, _) in self.cancelling {
            if s >= k || busy[s] || self.idle_servers.contains(&s) {
                return bad(format!("cancelling server {s} is also idle or busy"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    /// Start the next queued job on the idle server.
    New,
    /// Launch a replica of the given job on the idle server.
    Rep(u64),
    /// Leave the server idle. `recheck_after` asks to be consulted again after
    /// that much time even if nothing else happens (a threshold will be crossed).
    Wait { recheck_after: Option<f64> },
}

/// Replication thresholds of AdaRep.
#[derive(Debug, Clone, PartialEq)]
pub enum AdaRepThresholds {
    /// `t_{u -> i}` keyed by origin server and target (`pairs`), optionally
    /// refined by the whole replication history (`histories`). Missing
    /// entries are infinite. Server indices are zero-based.
    Heterogeneous {
        pairs: BTreeMap<(usize, usize), f64>,
        histories: BTreeMap<(Vec<usize>, usize), f64>,
    },
    /// `τ_c`: a job with `c` copies gets one more once its original has run
    /// for at least `τ_c`. Nondecreasing.
    Homogeneous(Vec<f64>),
}

impl AdaRepThresholds {
    /// Two-server shorthand `[t_{1->2}, t_{2->1}]`.
    pub fn pair(t12: f64, t21: f64) -> Self {
        let mut pairs = BTreeMap::new();
        pairs.insert((0, 1), t12);
        pairs.insert((1, 0), t21);
        AdaRepThresholds::Heterogeneous {
            pairs,
            histories: BTreeMap::new(),
        }
    }

    pub fn homogeneous(taus: Vec<f64>) -> Result<Self, PolicyError> {
        if taus.iter().any(|t| !(*t >= 0.0)) {
            return Err(PolicyError::Parse("thresholds must be >= 0".into()));
        }
        if taus.windows(2).any(|w| w[1] < w[0]) {
            return Err(PolicyError::Parse("homogeneous thresholds must be nondecreasing".into()));
        }
        Ok(AdaRepThresholds::Homogeneous(taus))
    }

    /// Threshold for replicating `job` onto `target`.
    pub fn threshold(&self, job: &JobView, target: usize) -> f64 {
        match self {
            AdaRepThresholds::Heterogeneous { pairs, histories } => {
                let history = job.history();
                if let Some(t) = histories.get(&(history, target)) {
                    return *t;
                }
                pairs
                    .get(&(job.replicas[0].server, target))
                    .copied()
                    .unwrap_or(f64::INFINITY)
            }
            AdaRepThresholds::Homogeneous(taus) => {
                taus.get(job.replicas.len() - 1).copied().unwrap_or(f64::INFINITY)
            }
        }
    }

    fn max_server(&self) -> Option<usize> {
        match self {
            AdaRepThresholds::Heterogeneous { pairs, histories } => pairs
                .keys()
                .flat_map(|&(a, b)| [a, b])
                .chain(histories.keys().flat_map(|(h, t)| h.iter().copied().chain([*t])))
                .max(),
            AdaRepThresholds::Homogeneous(_) => None,
        }
    }
}

/// Whether MaxRate charges `Δ` to jobs running two or more copies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaxRateDelta {
    #[default]
    Include,
    Exclude,
}

#[derive(Debug, Clone)]
pub enum PolicyInstance {
    NoRep,
    FullRep,
    Upfront(Partition),
    MaxRate(MaxRateDelta),
    AdaRep(AdaRepThresholds),
    Tabular(Arc<TabularPolicy>),
}

impl PartialEq for PolicyInstance {
    fn eq(&self, other: &Self) -> bool {
        use PolicyInstance::*;
        match (self, other) {
            (NoRep, NoRep) | (FullRep, FullRep) => true,
            (Upfront(a), Upfront(b)) => a == b,
            (MaxRate(a), MaxRate(b)) => a == b,
            (AdaRep(a), AdaRep(b)) => a == b,
            (Tabular(a), Tabular(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl PolicyInstance {
    /// Checks that server indices fit a `k`-server system.
    pub fn validate(&self, k: usize) -> Result<(), PolicyError> {
        let mismatch = |msg: String| Err(PolicyError::Mismatch { k, msg });
        match self {
            PolicyInstance::Upfront(p) if p.servers() != k => {
                mismatch(format!("partition {p} covers {} servers", p.servers()))
            }
            PolicyInstance::AdaRep(t) => match t.max_server() {
                Some(m) if m >= k => mismatch(format!("threshold mentions server {}", m + 1)),
                _ => Ok(()),
            },
            PolicyInstance::Tabular(t) if t.servers() != k => {
                mismatch(format!("table was solved for {} servers", t.servers()))
            }
            _ => Ok(()),
        }
    }

    pub fn decide(&self, obs: &Observation<'_>) -> Result<Decision, PolicyError> {
        obs.validate()?;
        match self {
            PolicyInstance::NoRep => Ok(new_or_wait(obs)),
            PolicyInstance::FullRep => {
                let all: Vec<usize> = (0..obs.system.k()).collect();
                Ok(group_decision(obs, &all))
            }
            PolicyInstance::Upfront(p) => {
                let g = p
                    .groups()
                    .iter()
                    .find(|g| g.contains(&obs.idle_server))
                    .ok_or_else(|| PolicyError::InconsistentObservation("server outside partition".into()))?;
                Ok(group_decision(obs, g))
            }
            PolicyInstance::AdaRep(t) => Ok(adarep_decision(obs, t)),
            PolicyInstance::MaxRate(mode) => maxrate_decision(obs, *mode),
            PolicyInstance::Tabular(t) => t.decide(obs),
        }
    }
}

fn new_or_wait(obs: &Observation<'_>) -> Decision {
    if obs.new_job_available {
        Decision::New
    } else {
        Decision::Wait { recheck_after: None }
    }
}

/// Upfront rule for one group: join a job launched on the group at this
/// instant, start a new one once the whole group is idle, otherwise wait.
fn group_decision(obs: &Observation<'_>, group: &[usize]) -> Decision {
    let joinable = obs.jobs.iter().find(|j| {
        j.original_elapsed() == 0.0
            && j.replicas.iter().all(|r| group.contains(&r.server))
            && !j.runs_on(obs.idle_server)
    });
    if let Some(j) = joinable {
        return Decision::Rep(j.id);
    }
    if group.iter().all(|s| obs.idle_servers.contains(s)) {
        new_or_wait(obs)
    } else {
        Decision::Wait { recheck_after: None }
    }
}

fn adarep_decision(obs: &Observation<'_>, t: &AdaRepThresholds) -> Decision {
    let mut best: Option<&JobView> = None;
    let mut next_crossing = f64::INFINITY;
    for j in obs.jobs {
        if j.runs_on(obs.idle_server) {
            continue;
        }
        let th = t.threshold(j, obs.idle_server);
        let e = j.original_elapsed();
        if e + THRESHOLD_SLACK >= th {
            let better = match best {
                None => true,
                Some(b) => e > b.original_elapsed() || (e == b.original_elapsed() && j.id < b.id),
            };
            if better {
                best = Some(j);
            }
        } else if th.is_finite() {
            next_crossing = next_crossing.min(th - e);
        }
    }
    match best {
        Some(j) => Decision::Rep(j.id),
        None if obs.new_job_available => Decision::New,
        None => Decision::Wait {
            recheck_after: next_crossing.is_finite().then_some(next_crossing),
        },
    }
}

/// Residual law of a copy, nudging the age back when float round-off put it
/// on or past the end of the support.
fn residual_at(d: &ServiceDistribution, elapsed: f64) -> Result<ResidualDistribution, DistError> {
    let mut age = elapsed;
    for _ in 0..4 {
        match d.residual(age) {
            Err(DistError::ZeroSupport { .. }) if age > 0.0 => {
                age = (age - THRESHOLD_SLACK).max(0.0);
            }
            other => return other,
        }
    }
    d.residual(age)
}

/// Expected time until the job departs if nothing else is launched for it.
fn expected_departure(
    obs: &Observation<'_>,
    replicas: &[ReplicaView],
    mode: MaxRateDelta,
) -> Result<f64, PolicyError> {
    let residuals = replicas
        .iter()
        .map(|r| residual_at(&obs.system.servers[r.server], r.elapsed))
        .collect::<Result<Vec<_>, _>>()?;
    let laws: Vec<&dyn TailLaw> = residuals.iter().map(|r| r as &dyn TailLaw).collect();
    let mut m = min_expectation(&laws)?;
    if replicas.len() >= 2 && mode == MaxRateDelta::Include {
        m += obs.system.delta;
    }
    Ok(m)
}

/// Sum of `1 / E[D_m]` over the jobs present after `action`; `None` means
/// leaving the server idle.
pub fn instantaneous_rate(
    obs: &Observation<'_>,
    action: Option<Decision>,
    mode: MaxRateDelta,
) -> Result<f64, PolicyError> {
    let fresh = ReplicaView {
        server: obs.idle_server,
        elapsed: 0.0,
    };
    let mut rate = 0.0;
    for j in obs.jobs {
        let d = if action == Some(Decision::Rep(j.id)) {
            let mut reps = j.replicas.clone();
            reps.push(fresh.clone());
            expected_departure(obs, &reps, mode)?
        } else {
            expected_departure(obs, &j.replicas, mode)?
        };
        rate += 1.0 / d;
    }
    if action == Some(Decision::New) {
        rate += 1.0 / obs.system.servers[obs.idle_server].mean()?;
    }
    Ok(rate)
}

fn maxrate_decision(obs: &Observation<'_>, mode: MaxRateDelta) -> Result<Decision, PolicyError> {
    // one job changes per candidate, so swap its term out of the base sum
    let base: Vec<f64> = obs
        .jobs
        .iter()
        .map(|j| expected_departure(obs, &j.replicas, mode).map(|d| 1.0 / d))
        .collect::<Result<_, _>>()?;
    let total: f64 = base.iter().sum();
    let (mut best, mut best_rate) = if obs.new_job_available {
        let fresh = 1.0 / obs.system.servers[obs.idle_server].mean()?;
        (Decision::New, total + fresh)
    } else {
        (Decision::Wait { recheck_after: None }, total)
    };
    let fresh = ReplicaView {
        server: obs.idle_server,
        elapsed: 0.0,
    };
    for (j, b) in obs.jobs.iter().zip(&base) {
        if j.runs_on(obs.idle_server) {
            continue;
        }
        let mut reps = j.replicas.clone();
        reps.push(fresh.clone());
        let r = total - b + 1.0 / expected_departure(obs, &reps, mode)?;
        if r > best_rate * (1.0 + TIE_TOL) {
            best = Decision::Rep(j.id);
            best_rate = r;
        }
    }
    Ok(best)
}

impl fmt::Display for AdaRepThresholds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdaRepThresholds::Heterogeneous { pairs, histories } => {
                f.write_str("adarep:{")?;
                let mut first = true;
                for ((a, b), t) in pairs {
                    if !first {
                        f.write_str(",")?;
                    }
                    first = false;
                    write!(f, "{}->{}:{}", a + 1, b + 1, fmt_num(*t))?;
                }
                for ((h, b), t) in histories {
                    if !first {
                        f.write_str(",")?;
                    }
                    first = false;
                    let h: Vec<String> = h.iter().map(|s| (s + 1).to_string()).collect();
                    write!(f, "[{}]->{}:{}", h.join(","), b + 1, fmt_num(*t))?;
                }
                f.write_str("}")
            }
            AdaRepThresholds::Homogeneous(taus) => {
                let t: Vec<String> = taus.iter().map(|t| fmt_num(*t)).collect();
                write!(f, "adarep-hom:[{}]", t.join(","))
            }
        }
    }
}

impl fmt::Display for PolicyInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyInstance::NoRep => f.write_str("norep"),
            PolicyInstance::FullRep => f.write_str("fullrep"),
            PolicyInstance::Upfront(p) => write!(f, "upfront:{p}"),
            PolicyInstance::MaxRate(MaxRateDelta::Include) => f.write_str("maxrate"),
            PolicyInstance::MaxRate(MaxRateDelta::Exclude) => f.write_str("maxrate:{delta:exclude}"),
            PolicyInstance::AdaRep(t) => t.fmt(f),
            PolicyInstance::Tabular(_) => f.write_str("tabular"),
        }
    }
}
