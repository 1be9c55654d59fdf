use rayon::prelude::*;

use replicap::analytic::{
    best_homogeneous_r, best_partition, throughput_fullrep, throughput_norep, throughput_upfront, AnalyticError,
    ThroughputReport,
};
use replicap::bounds::{
    homogeneous_bound, optimize_pause_bound, BoundReport, DeltaCharge, Estimator, MinimizerConfig, ThresholdGrid,
    MIN_PATHS,
};
use replicap::engine::{event_trace, run_poisson, run_saturated, RunResult, TraceEvent};
use replicap::mdp::{build_mdp, evaluate_policy, policy_from_instance, solve_average_cost, TabularPolicy};
use replicap::policies::PolicyInstance;
use replicap::SystemConfig;

use crate::config::{BoundKind, ChargeKind, EstimatorKind, Experiment, Mode, Point};
use crate::error::{CliError, Classify};
use crate::output::{num, opt, vector, Table};

const SATURATED_JOBS: usize = 100_000;
const POISSON_JOBS: usize = 1000;
const POISSON_RUNS: usize = 100;
const DEFAULT_PATHS: usize = 100_000;
/// Beyond this many servers the partition search is skipped.
const PARTITION_SERVERS: usize = 12;

fn axis_cells(e: &Experiment, p: &Point) -> Vec<String> {
    e.axes().iter().map(|a| num(p.bindings[a])).collect()
}

/// `adarep:{1->2:inf, 2->1:1}` becomes (`adarep`, `{1->2:inf, 2->1:1}`).
fn split_policy(p: &PolicyInstance) -> (String, String) {
    let s = p.to_string();
    match s.split_once(':') {
        Some((a, b)) => (a.to_string(), b.to_string()),
        None => (s, String::new()),
    }
}

fn all_identical(s: &SystemConfig) -> bool {
    s.servers.windows(2).all(|w| w[0] == w[1])
}

pub fn analytic(e: &Experiment) -> Result<Table, CliError> {
    let points = e.points()?;
    let mut t = Table::new(&e.digest(), &e.axes(), &["policy", "params", "throughput", "argmax"]);
    for p in &points {
        let ax = axis_cells(e, p);
        let ds = &p.system.servers;
        let delta = p.system.delta;
        let mut row = |policy: &str, params: String, r: Result<(f64, String), AnalyticError>| {
            let mut cells = ax.clone();
            cells.extend([policy.to_string(), params]);
            match r {
                Ok((v, arg)) => {
                    cells.extend([num(v), arg]);
                    t.push(cells, None);
                }
                Err(err) => {
                    cells.extend([String::new(), String::new()]);
                    t.push(cells, Some(err.into_cli()));
                }
            }
        };
        let value = |r: Result<ThroughputReport, AnalyticError>| r.map(|x| (x.value, String::new()));
        row("norep", String::new(), value(throughput_norep(ds)));
        row("fullrep", String::new(), value(throughput_fullrep(ds, delta)));
        for pol in &p.policies {
            if let PolicyInstance::Upfront(part) = pol {
                row("upfront", part.to_string(), value(throughput_upfront(part, ds, delta)));
            }
        }
        if ds.len() <= PARTITION_SERVERS {
            let r = best_partition(ds, delta).map(|(part, rep)| (rep.value, part.to_string()));
            row("best-partition", String::new(), r);
        }
        if all_identical(&p.system) {
            let k = ds.len();
            match best_homogeneous_r(&ds[0], delta, k) {
                Ok(h) => {
                    for (i, c) in h.costs.iter().enumerate() {
                        row("replicate-r", format!("r={}", i + 1), Ok((k as f64 / c, String::new())));
                    }
                    let arg = format!("r={} divides={}", h.r, h.divides);
                    row("best-r", String::new(), Ok((h.bound, arg)));
                }
                Err(err) => row("best-r", String::new(), Err(err)),
            }
        }
    }
    Ok(t)
}

struct SimTask<'a> {
    point: &'a Point,
    policy: &'a PolicyInstance,
    lambda: Option<f64>,
    seed: u64,
}

pub fn simulate(e: &Experiment) -> Result<Table, CliError> {
    let points = e.points()?;
    let sim = &e.config.simulate;
    if e.config.policies.is_empty() {
        return Err(CliError::Config("`policies` is empty; nothing to simulate".into()));
    }
    let base = e.seed();
    let mut tasks = Vec::new();
    for p in &points {
        for pol in &p.policies {
            match sim.mode {
                Mode::Saturated => {
                    for r in 0..sim.runs.unwrap_or(1) {
                        tasks.push(SimTask {
                            point: p,
                            policy: pol,
                            lambda: None,
                            seed: base + r as u64,
                        });
                    }
                }
                Mode::Poisson => {
                    if sim.lambda.is_empty() {
                        return Err(CliError::Config("poisson mode needs `simulate.lambda`".into()));
                    }
                    for &l in &sim.lambda {
                        tasks.push(SimTask {
                            point: p,
                            policy: pol,
                            lambda: Some(l),
                            seed: base,
                        });
                    }
                }
            }
        }
    }
    let results: Vec<Result<RunResult, CliError>> = tasks
        .par_iter()
        .map(|t| {
            let r = match t.lambda {
                None => run_saturated(&t.point.system, t.policy, sim.jobs.unwrap_or(SATURATED_JOBS), t.seed),
                Some(l) => run_poisson(
                    &t.point.system,
                    t.policy,
                    l,
                    sim.jobs.unwrap_or(POISSON_JOBS),
                    sim.runs.unwrap_or(POISSON_RUNS),
                    t.seed,
                ),
            };
            r.map_err(Classify::into_cli)
        })
        .collect();
    let mut table = Table::new(
        &e.digest(),
        &e.axes(),
        &[
            "policy",
            "params",
            "lambda",
            "n_jobs",
            "runs",
            "seed",
            "throughput",
            "throughput_stderr",
            "mean_C",
            "mean_C_stderr",
            "mean_response",
            "response_stderr",
            "busy_servers",
            "unstable",
        ],
    );
    for (t, r) in tasks.iter().zip(results) {
        let mut cells = axis_cells(e, t.point);
        let (name, params) = split_policy(t.policy);
        let lambda = t.lambda.map(num).unwrap_or_else(|| "sat".into());
        cells.extend([name, params, lambda]);
        match r {
            Ok(r) => {
                cells.extend([
                    r.n_jobs.to_string(),
                    r.runs.to_string(),
                    r.seed.to_string(),
                    num(r.throughput),
                    num(r.throughput_stderr),
                    num(r.mean_computing_time),
                    num(r.computing_stderr),
                    opt(r.mean_response),
                    opt(r.response_stderr),
                    num(r.busy_servers),
                    r.unstable.to_string(),
                ]);
                table.push(cells, None);
            }
            Err(err) => {
                cells.extend([String::new(), String::new(), t.seed.to_string()]);
                cells.extend(std::iter::repeat_n(String::new(), 8));
                table.push(cells, Some(err));
            }
        }
    }
    Ok(table)
}

/// Saturated event log of the first policy at the first sweep point.
pub fn trace(e: &Experiment, horizon: f64) -> Result<String, CliError> {
    let points = e.points()?;
    let p = &points[0];
    let pol = p
        .policies
        .first()
        .ok_or_else(|| CliError::Config("`policies` is empty; nothing to trace".into()))?;
    let log = event_trace(&p.system, pol, horizon, e.seed()).map_err(Classify::into_cli)?;
    let mut s = format!("{}\n", TraceEvent::CSV_HEADER);
    for ev in log {
        s.push_str(&ev.csv_row());
        s.push('\n');
    }
    Ok(s)
}

fn bound_at(e: &Experiment, p: &Point) -> Result<(&'static str, BoundReport), CliError> {
    let b = &e.config.bound;
    let sys = &p.system;
    let kind = match b.kind {
        BoundKind::Auto if all_identical(sys) => BoundKind::Homogeneous,
        BoundKind::Auto => BoundKind::Pause,
        k => k,
    };
    match kind {
        BoundKind::Pause => {
            if sys.k() != 2 {
                return Err(CliError::Config(format!(
                    "the pause bound covers two servers, got {}",
                    sys.k()
                )));
            }
            let means: Vec<f64> = sys.servers.iter().filter_map(|d| d.mean().ok()).collect();
            let mut grid = ThresholdGrid::for_laws(&sys.servers).map_err(Classify::into_cli)?;
            if !means.is_empty() {
                let lo = 0.01 * means.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = 100.0 * means.iter().cloned().fold(0.0, f64::max);
                grid = grid.with_log_points(lo, hi, b.grid);
            }
            let r = optimize_pause_bound(&sys.servers, sys.delta, &grid).map_err(Classify::into_cli)?;
            Ok(("pause", r))
        }
        _ => {
            if !all_identical(sys) {
                return Err(CliError::Config("the start-time bound needs identical servers".into()));
            }
            let estimator = match b.estimator {
                EstimatorKind::Exact => Estimator::Exact,
                EstimatorKind::Mc => {
                    let paths = b.paths.unwrap_or(DEFAULT_PATHS);
                    if paths < MIN_PATHS {
                        return Err(CliError::Config(format!("at least {MIN_PATHS} paths are needed")));
                    }
                    Estimator::MonteCarlo { paths, seed: e.seed() }
                }
            };
            let config = MinimizerConfig {
                estimator,
                charge: match b.charge {
                    ChargeKind::AsPrinted => DeltaCharge::AsPrinted,
                    ChargeKind::ReplicasOnly => DeltaCharge::ReplicasOnly,
                },
                log_points: b.grid,
                ..Default::default()
            };
            let r = homogeneous_bound(&sys.servers[0], sys.delta, sys.k(), &config).map_err(Classify::into_cli)?;
            Ok(("start-time", r))
        }
    }
}

pub fn bound(e: &Experiment) -> Result<Table, CliError> {
    let points = e.points()?;
    let results: Vec<_> = points.par_iter().map(|p| bound_at(e, p)).collect();
    let mut t = Table::new(&e.digest(), &e.axes(), &["kind", "bound", "thresholds", "stderr", "evaluations"]);
    for (p, r) in points.iter().zip(results) {
        let mut cells = axis_cells(e, p);
        match r {
            Ok((kind, b)) => {
                cells.extend([
                    kind.to_string(),
                    num(b.value),
                    vector(&b.thresholds),
                    num(b.stderr),
                    b.evaluations.to_string(),
                ]);
                t.push(cells, None);
            }
            // a bad bound kind for this system is not a per-row matter
            Err(err @ CliError::Config(_)) => return Err(err),
            Err(err) => {
                cells.extend(std::iter::repeat_n(String::new(), 5));
                t.push(cells, Some(err));
            }
        }
    }
    Ok(t)
}

pub struct MdpOutput {
    pub table: Table,
    /// Optimal policy table per sweep point.
    pub policies: Vec<TabularPolicy>,
}

pub fn mdp(e: &Experiment) -> Result<MdpOutput, CliError> {
    let points = e.points()?;
    let m = &e.config.mdp;
    let mut t = Table::new(
        &e.digest(),
        &e.axes(),
        &["policy", "params", "states", "gain", "throughput", "iterations"],
    );
    let mut tables = Vec::new();
    for p in &points {
        let ax = axis_cells(e, p);
        let kernel = build_mdp(&p.system, m.state_cap).map_err(Classify::into_cli)?;
        let k = p.system.k() as f64;
        let states = kernel.len().to_string();
        let mut cells = ax.clone();
        cells.extend(["optimal".to_string(), String::new(), states.clone()]);
        match solve_average_cost(&kernel, m.tol, m.max_iters) {
            Ok(sol) => {
                cells.extend([num(sol.gain), num(sol.throughput), sol.iterations.to_string()]);
                t.push(cells, None);
                tables.push(TabularPolicy::from_solution(&kernel, &sol));
            }
            Err(err) => {
                cells.extend([String::new(), String::new(), String::new()]);
                t.push(cells, Some(err.into_cli()));
            }
        }
        for pol in &p.policies {
            let (name, params) = split_policy(pol);
            let mut cells = ax.clone();
            cells.extend([name, params, states.clone()]);
            let g = policy_from_instance(&kernel, &p.system, pol).and_then(|idx| evaluate_policy(&kernel, &idx));
            match g {
                Ok(g) => {
                    cells.extend([num(g), num(k / g), String::new()]);
                    t.push(cells, None);
                }
                Err(err) => {
                    cells.extend([String::new(), String::new(), String::new()]);
                    t.push(cells, Some(err.into_cli()));
                }
            }
        }
    }
    Ok(MdpOutput { table: t, policies: tables })
}
