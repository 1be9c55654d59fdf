//! Seeded discrete-event simulation of the central-queue system.
//!
//! `K` servers share one queue. Whenever servers are idle after all events
//! at an instant have been processed, they are offered to the policy in
//! ascending index order. A job leaves with its first finished copy; if it
//! ran two or more copies, every server that hosted one (the finisher
//! included) then spends `Δ` in a cancellation window. Single copies leave
//! without any window.
//!
//! Simultaneous events are ordered completion, end of cancellation, arrival,
//! wakeup, then by job id and server index. Each run uses two ChaCha8
//! streams of the seed, one for service times and one for arrivals, so the
//! same seed always reproduces the same trajectory.

mod sim;
pub mod stats;

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::dist::DistError;
use crate::policies::{PolicyError, PolicyInstance};
use crate::system::SystemConfig;
use sim::Sim;
use stats::{batch_ranges, mean_and_stderr, ratio_estimate};

/// Fraction of departures discarded before saturated estimates.
pub const WARMUP_FRACTION: f64 = 0.01;
const BATCHES: usize = 50;
/// Congested departures needed before the in-run capacity estimate is
/// trusted for the stability verdict.
const MIN_CONGESTED_DEPARTURES: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("invalid run: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub policy: String,
    /// Arrival rate, `None` for a saturated run.
    pub lambda: Option<f64>,
    /// Departures simulated (summed over runs).
    pub n_jobs: usize,
    pub runs: usize,
    pub seed: u64,
    /// End of the measurement window (saturated) or mean end time (Poisson).
    pub horizon: f64,
    pub throughput: f64,
    pub throughput_stderr: f64,
    /// Mean server time consumed per job, cancellation windows included.
    pub mean_computing_time: f64,
    pub computing_stderr: f64,
    /// `throughput × mean computing time`; equals `K` when no server idles.
    pub busy_servers: f64,
    pub busy_servers_stderr: f64,
    pub mean_response: Option<f64>,
    pub response_stderr: Option<f64>,
    /// Longest positive stretch a server idled before its next assignment.
    pub max_idle_gap: f64,
    pub unstable: bool,
}

fn validate(system: &SystemConfig, policy: &PolicyInstance, n_jobs: usize) -> Result<(), EngineError> {
    policy.validate(system.k())?;
    if n_jobs == 0 {
        return Err(EngineError::Invalid("at least one job is needed".into()));
    }
    if let Some(i) = system.servers.iter().position(|d| d.tail(0.0) == 0.0) {
        return Err(EngineError::Invalid(format!("server {} always finishes in zero time", i + 1)));
    }
    Ok(())
}

/// Throughput with an infinite backlog: the policy may always start a new
/// job. The first 1% of departures are discarded.
pub fn run_saturated(
    system: &SystemConfig,
    policy: &PolicyInstance,
    n_jobs: usize,
    seed: u64,
) -> Result<RunResult, EngineError> {
    validate(system, policy, n_jobs)?;
    let mut sim = Sim::new(system, policy, seed, 0);
    sim.run(|s| s.departures.len() >= n_jobs)?;
    let warm = ((n_jobs as f64 * WARMUP_FRACTION) as usize).min(n_jobs - 1);
    let deps = &sim.departures;
    let t0 = if warm == 0 { 0.0 } else { deps[warm - 1].time };
    let measured = &deps[warm..];
    let mut jobs_per_batch = Vec::new();
    let mut computing_per_batch = Vec::new();
    let mut work_per_batch = Vec::new();
    let mut start = t0;
    for r in batch_ranges(measured.len(), BATCHES) {
        let b = &measured[r];
        let end = b.last().map_or(start, |d| d.time);
        let c: f64 = b.iter().map(|d| d.computing).sum();
        jobs_per_batch.push((b.len() as f64, end - start));
        computing_per_batch.push((c, b.len() as f64));
        work_per_batch.push((c, end - start));
        start = end;
    }
    let thr = ratio_estimate(&jobs_per_batch);
    let comp = ratio_estimate(&computing_per_batch);
    let work = ratio_estimate(&work_per_batch);
    Ok(RunResult {
        policy: policy.to_string(),
        lambda: None,
        n_jobs,
        runs: 1,
        seed,
        horizon: deps.last().map_or(0.0, |d| d.time),
        throughput: thr.value,
        throughput_stderr: thr.stderr,
        mean_computing_time: comp.value,
        computing_stderr: comp.stderr,
        busy_servers: work.value,
        busy_servers_stderr: work.stderr,
        mean_response: None,
        response_stderr: None,
        max_idle_gap: sim.max_idle_gap,
        unstable: false,
    })
}

struct PoissonRun {
    mean_response: f64,
    end: f64,
    departures: usize,
    computing: f64,
    literal_unstable: bool,
    congested_time: f64,
    congested_departures: usize,
}

/// Mean response time under Poisson arrivals, averaged over `n_runs`
/// independent runs of `n_jobs` arrivals each (run `r` uses stream `r` of
/// the seed; runs execute in parallel and are merged in run order).
///
/// The run is flagged unstable when the queue left at the last arrival is
/// more than ten times the number of jobs served by then, or when the
/// departure rate measured while the queue was non-empty, pooled over runs,
/// does not exceed `λ`.
pub fn run_poisson(
    system: &SystemConfig,
    policy: &PolicyInstance,
    lambda: f64,
    n_jobs: usize,
    n_runs: usize,
    seed: u64,
) -> Result<RunResult, EngineError> {
    validate(system, policy, n_jobs)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(EngineError::Invalid(format!("arrival rate {lambda} must be positive")));
    }
    if n_runs == 0 {
        return Err(EngineError::Invalid("at least one run is needed".into()));
    }
    let runs: Vec<PoissonRun> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| -> Result<PoissonRun, EngineError> {
            let mut sim = Sim::new(system, policy, seed, r).poisson(lambda, n_jobs);
            sim.run(|s| s.departures.len() >= n_jobs)?;
            let responses: Vec<f64> = sim.departures.iter().map(|d| d.response).collect();
            Ok(PoissonRun {
                mean_response: responses.iter().sum::<f64>() / responses.len() as f64,
                end: sim.now,
                departures: sim.departures.len(),
                computing: sim.departures.iter().map(|d| d.computing).sum(),
                literal_unstable: sim.queue_at_last_arrival > 10 * sim.served_at_last_arrival.max(1)
                    || (sim.served_at_last_arrival == 0 && sim.queue_at_last_arrival > 10),
                congested_time: sim.congested_time,
                congested_departures: sim.congested_departures,
            })
        })
        .collect::<Result<_, _>>()?;
    let means: Vec<f64> = runs.iter().map(|r| r.mean_response).collect();
    let (resp, resp_se) = mean_and_stderr(&means);
    let per_run: Vec<(f64, f64)> = runs.iter().map(|r| (r.departures as f64, r.end)).collect();
    let thr = ratio_estimate(&per_run);
    let comp = ratio_estimate(&runs.iter().map(|r| (r.computing, r.departures as f64)).collect::<Vec<_>>());
    let work = ratio_estimate(&runs.iter().map(|r| (r.computing, r.end)).collect::<Vec<_>>());
    let cong_deps: usize = runs.iter().map(|r| r.congested_departures).sum();
    let cong_time: f64 = runs.iter().map(|r| r.congested_time).sum();
    let capacity_exceeded = cong_deps >= MIN_CONGESTED_DEPARTURES && (cong_deps as f64) / cong_time <= lambda;
    let unstable = runs.iter().any(|r| r.literal_unstable) || capacity_exceeded;
    Ok(RunResult {
        policy: policy.to_string(),
        lambda: Some(lambda),
        n_jobs: runs.iter().map(|r| r.departures).sum(),
        runs: n_runs,
        seed,
        horizon: runs.iter().map(|r| r.end).sum::<f64>() / n_runs as f64,
        throughput: thr.value,
        throughput_stderr: thr.stderr,
        mean_computing_time: comp.value,
        computing_stderr: comp.stderr,
        busy_servers: work.value,
        busy_servers_stderr: work.stderr,
        mean_response: Some(resp),
        response_stderr: Some(resp_se),
        max_idle_gap: f64::NAN,
        unstable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Arrival,
    StartNew,
    StartReplica,
    Departure,
    CancelEnd,
    Wakeup,
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceKind::Arrival => "arrival",
            TraceKind::StartNew => "start",
            TraceKind::StartReplica => "replica",
            TraceKind::Departure => "departure",
            TraceKind::CancelEnd => "cancel-end",
            TraceKind::Wakeup => "wakeup",
        })
    }
}

/// One row of an event log. Servers are zero-based here and one-based in CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: TraceKind,
    pub job: Option<u64>,
    pub server: Option<usize>,
    pub detail: String,
}

impl TraceEvent {
    pub const CSV_HEADER: &'static str = "time,event,job_id,server,detail";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.time,
            self.kind,
            self.job.map_or(String::new(), |j| j.to_string()),
            self.server.map_or(String::new(), |s| (s + 1).to_string()),
            self.detail
        )
    }
}

/// Saturated-mode event log up to time `horizon`.
pub fn event_trace(
    system: &SystemConfig,
    policy: &PolicyInstance,
    horizon: f64,
    seed: u64,
) -> Result<Vec<TraceEvent>, EngineError> {
    validate(system, policy, 1)?;
    let mut sim = Sim::new(system, policy, seed, 0).with_trace();
    sim.run(|s| s.now > horizon)?;
    let mut log = sim.trace.take().unwrap_or_default();
    log.retain(|e| e.time <= horizon);
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ServiceDistribution as SD;
    use crate::policies::AdaRepThresholds;

    fn example() -> SystemConfig {
        SystemConfig::new(
            vec![
                SD::deterministic(2.0).unwrap(),
                SD::finite([(1.0, 0.9), (20.0, 0.1)]).unwrap(),
            ],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_norep_departures() {
        let sys = SystemConfig::homogeneous(SD::deterministic(2.0).unwrap(), 2, 0.0).unwrap();
        let log = event_trace(&sys, &PolicyInstance::NoRep, 8.0, 1).unwrap();
        let times: Vec<f64> = log
            .iter()
            .filter(|e| e.kind == TraceKind::Departure)
            .map(|e| e.time)
            .collect();
        assert_eq!(times, vec![2.0, 2.0, 4.0, 4.0, 6.0, 6.0, 8.0, 8.0]);
    }

    #[test]
    fn adarep_replicates_the_straggler() {
        let p = PolicyInstance::AdaRep(AdaRepThresholds::pair(f64::INFINITY, 1.0));
        let log = event_trace(&example(), &p, 60.0, 5).unwrap();
        let reps: Vec<&TraceEvent> = log.iter().filter(|e| e.kind == TraceKind::StartReplica).collect();
        assert!(!reps.is_empty());
        for r in reps {
            assert_eq!(r.server, Some(0));
            let e: f64 = r.detail.trim_start_matches("elapsed=").parse().unwrap();
            assert!(e >= 1.0);
        }
    }

    #[test]
    fn traces_are_reproducible() {
        let p = PolicyInstance::MaxRate(Default::default());
        let a = event_trace(&example(), &p, 100.0, 9).unwrap();
        let b = event_trace(&example(), &p, 100.0, 9).unwrap();
        assert_eq!(a, b);
        let c = event_trace(&example(), &p, 100.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cancellation_windows_last_delta() {
        let sys = SystemConfig::homogeneous(SD::exponential(1.0).unwrap(), 3, 0.25).unwrap();
        let log = event_trace(&sys, &PolicyInstance::FullRep, 30.0, 2).unwrap();
        let deps: Vec<f64> = log.iter().filter(|e| e.kind == TraceKind::Departure).map(|e| e.time).collect();
        let ends: Vec<f64> = log.iter().filter(|e| e.kind == TraceKind::CancelEnd).map(|e| e.time).collect();
        assert!(deps.len() > 5);
        for (i, d) in deps.iter().enumerate() {
            if d + 0.25 <= 30.0 {
                for s in 0..3 {
                    assert!((ends[3 * i + s] - (d + 0.25)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_copies_never_cancel() {
        let sys = SystemConfig::homogeneous(SD::exponential(1.0).unwrap(), 2, 0.5).unwrap();
        let log = event_trace(&sys, &PolicyInstance::NoRep, 50.0, 3).unwrap();
        assert!(log.iter().all(|e| e.kind != TraceKind::CancelEnd));
    }

    #[test]
    fn saturated_example_norep() {
        let r = run_saturated(&example(), &PolicyInstance::NoRep, 200_000, 11).unwrap();
        let want = 0.5 + 1.0 / 2.9;
        assert!((r.throughput - want).abs() < 4.0 * r.throughput_stderr, "{r:?}");
        assert!((r.busy_servers - 2.0).abs() < 1e-2);
        assert_eq!(r.max_idle_gap, 0.0);
    }

    #[test]
    fn poisson_light_load() {
        let r = run_poisson(&example(), &PolicyInstance::FullRep, 0.05, 300, 20, 4).unwrap();
        let m = r.mean_response.unwrap();
        assert!((m - 1.1).abs() < 0.055 + 3.0 * r.response_stderr.unwrap(), "{m}");
        assert!(!r.unstable);
    }

    #[test]
    fn poisson_overload_is_flagged() {
        let r = run_poisson(&example(), &PolicyInstance::NoRep, 1.0, 1000, 20, 4).unwrap();
        assert!(r.unstable);
    }

    #[test]
    fn rejects_bad_runs() {
        let zero = SystemConfig::new(vec![SD::deterministic(0.0).unwrap()], 0.0).unwrap();
        assert!(run_saturated(&zero, &PolicyInstance::NoRep, 10, 1).is_err());
        assert!(run_saturated(&example(), &PolicyInstance::NoRep, 0, 1).is_err());
        assert!(run_poisson(&example(), &PolicyInstance::NoRep, 0.0, 10, 1, 1).is_err());
    }
}
