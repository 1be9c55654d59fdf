use std::collections::HashMap;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::{MdpAction, MdpError, MdpState, Slot, TransitionKernel};
use crate::policies::{Decision, JobView, Observation, PolicyError, PolicyInstance, ReplicaView};
use crate::system::SystemConfig;

/// Weight on the real transition in the aperiodicity transform
/// `P' = τ P + (1 - τ) I`.
const LAZY: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct MdpSolution {
    /// Index into `kernel.actions[s]` for every state.
    pub policy: Vec<usize>,
    /// Long-run server time per departure.
    pub gain: f64,
    /// `K / gain`.
    pub throughput: f64,
    /// Total value-iteration sweeps.
    pub iterations: usize,
}

struct Expected {
    cost: Vec<Vec<f64>>,
    deps: Vec<Vec<f64>>,
}

fn expected(kernel: &TransitionKernel) -> Expected {
    let mut cost = Vec::with_capacity(kernel.len());
    let mut deps = Vec::with_capacity(kernel.len());
    for acts in &kernel.actions {
        cost.push(
            acts.iter()
                .map(|(_, o)| o.iter().map(|o| o.prob * o.cost).sum())
                .collect(),
        );
        deps.push(
            acts.iter()
                .map(|(_, o)| o.iter().map(|o| o.prob * o.departures as f64).sum())
                .collect(),
        );
    }
    Expected { cost, deps }
}

/// Relative value iteration for the per-step cost `c - g d`. Returns the
/// greedy policy and the number of sweeps.
fn relative_value_iteration(
    kernel: &TransitionKernel,
    ex: &Expected,
    g: f64,
    tol: f64,
    max_iters: usize,
    h: &mut Vec<f64>,
) -> Result<(Vec<usize>, usize), MdpError> {
    let n = kernel.len();
    let reference = kernel.initial;
    let mut next = vec![0.0; n];
    let mut policy = vec![0usize; n];
    let mut span = f64::INFINITY;
    let scale = g.abs().max(1.0);
    for iter in 1..=max_iters {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in 0..n {
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for (a, (_, outs)) in kernel.actions[s].iter().enumerate() {
                let mut q = ex.cost[s][a] - g * ex.deps[s][a];
                for o in outs {
                    q += o.prob * h[o.next];
                }
                // earlier actions win near-ties, keeping the policy reproducible
                if q < best - 1e-12 * scale {
                    best = q;
                    arg = a;
                }
            }
            policy[s] = arg;
            let v = LAZY * best + (1.0 - LAZY) * h[s];
            let diff = v - h[s];
            lo = lo.min(diff);
            hi = hi.max(diff);
            next[s] = v;
        }
        span = hi - lo;
        let offset = next[reference];
        for s in 0..n {
            h[s] = next[s] - offset;
        }
        if span < tol * scale {
            return Ok((policy, iter));
        }
    }
    Err(MdpError::NoConvergence {
        iters: max_iters,
        span,
    })
}

/// Long-run cost per departure of a stationary policy started in the
/// all-idle state.
pub fn evaluate_policy(kernel: &TransitionKernel, policy: &[usize]) -> Result<f64, MdpError> {
    let ex = expected(kernel);
    let n = kernel.len();
    let mut pi = vec![0.0; n];
    pi[kernel.initial] = 1.0;
    let mut next = vec![0.0; n];
    let mut last_gain = f64::NAN;
    let max_iters = 10_000_000 / n.max(1) + 100_000;
    for iter in 0..max_iters {
        next.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..n {
            if pi[s] == 0.0 {
                continue;
            }
            next[s] += (1.0 - LAZY) * pi[s];
            for o in &kernel.actions[s][policy[s]].1 {
                next[o.next] += LAZY * pi[s] * o.prob;
            }
        }
        let change: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if iter % 64 == 0 || change < 1e-15 {
            let c: f64 = (0..n).map(|s| pi[s] * ex.cost[s][policy[s]]).sum();
            let d: f64 = (0..n).map(|s| pi[s] * ex.deps[s][policy[s]]).sum();
            let gain = c / d;
            if change < 1e-15 || (change < 1e-13 && (gain - last_gain).abs() <= 1e-14 * gain) {
                return Ok(gain);
            }
            last_gain = gain;
        }
    }
    Err(MdpError::NoConvergence {
        iters: max_iters,
        span: f64::NAN,
    })
}

/// Number of closed communicating classes reachable from the start state.
fn recurrent_classes(kernel: &TransitionKernel, policy: &[usize]) -> usize {
    let mut g = DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..kernel.len()).map(|_| g.add_node(())).collect();
    let mut reach = vec![false; kernel.len()];
    let mut stack = vec![kernel.initial];
    reach[kernel.initial] = true;
    while let Some(s) = stack.pop() {
        for o in &kernel.actions[s][policy[s]].1 {
            if o.prob > 0.0 {
                g.add_edge(nodes[s], nodes[o.next], ());
                if !reach[o.next] {
                    reach[o.next] = true;
                    stack.push(o.next);
                }
            }
        }
    }
    let sccs = tarjan_scc(&g);
    let mut comp = vec![usize::MAX; kernel.len()];
    for (c, members) in sccs.iter().enumerate() {
        for v in members {
            comp[v.index()] = c;
        }
    }
    sccs.iter()
        .enumerate()
        .filter(|(c, members)| {
            reach[members[0].index()]
                && members.iter().all(|v| {
                    g.neighbors(*v).all(|w| comp[w.index()] == *c)
                })
        })
        .count()
}

/// Minimizes the long-run cost per departure.
///
/// An outer ratio iteration fixes a guess `g` of the optimal cost per
/// departure, solves the average-cost problem with per-step cost
/// `cost - g * departures` by relative value iteration, and moves `g` to the
/// exact ratio of the greedy policy; it stops once `g` no longer improves.
pub fn solve_average_cost(
    kernel: &TransitionKernel,
    tol: f64,
    max_iters: usize,
) -> Result<MdpSolution, MdpError> {
    let ex = expected(kernel);
    let mut policy = vec![0usize; kernel.len()];
    let mut gain = evaluate_policy(kernel, &policy)?;
    let mut h = vec![0.0; kernel.len()];
    let mut iterations = 0;
    for _ in 0..200 {
        let (candidate, it) = relative_value_iteration(kernel, &ex, gain, tol, max_iters, &mut h)?;
        iterations += it;
        let g = evaluate_policy(kernel, &candidate)?;
        if g < gain * (1.0 - 1e-12) {
            gain = g;
            policy = candidate;
        } else {
            break;
        }
    }
    let classes = recurrent_classes(kernel, &policy);
    if classes != 1 {
        return Err(MdpError::MultichainDetected { classes });
    }
    Ok(MdpSolution {
        throughput: kernel.servers as f64 / gain,
        policy,
        gain,
        iterations,
    })
}

fn job_views(state: &MdpState, unit: f64) -> Vec<JobView> {
    state
        .jobs()
        .into_iter()
        .map(|j| {
            let mut replicas: Vec<ReplicaView> = state
                .slots
                .iter()
                .enumerate()
                .filter_map(|(server, slot)| match slot {
                    Slot::Busy { job, elapsed } if *job == j => Some(ReplicaView {
                        server,
                        elapsed: *elapsed as f64 * unit,
                    }),
                    _ => None,
                })
                .collect();
            // the longest-running copy is taken as the original
            replicas.sort_by(|a, b| b.elapsed.total_cmp(&a.elapsed).then(a.server.cmp(&b.server)));
            JobView {
                id: j as u64,
                replicas,
            }
        })
        .collect()
}

/// Action chosen by `policy` in every state of the kernel.
pub fn policy_from_instance(
    kernel: &TransitionKernel,
    system: &SystemConfig,
    policy: &PolicyInstance,
) -> Result<Vec<usize>, MdpError> {
    policy.validate(system.k())?;
    // Only states the rule can reach matter; elsewhere it may well idle.
    let mut out = vec![0usize; kernel.len()];
    let mut seen = vec![false; kernel.len()];
    let mut stack = vec![kernel.initial];
    seen[kernel.initial] = true;
    while let Some(s) = stack.pop() {
        out[s] = choose(kernel, system, policy, s)?;
        for o in &kernel.actions[s][out[s]].1 {
            if !seen[o.next] {
                seen[o.next] = true;
                stack.push(o.next);
            }
        }
    }
    Ok(out)
}

fn choose(
    kernel: &TransitionKernel,
    system: &SystemConfig,
    policy: &PolicyInstance,
    s: usize,
) -> Result<usize, MdpError> {
    let state = &kernel.states[s];
    let Some(idle) = state.first_idle() else {
        return Ok(0);
    };
    let idle_servers: Vec<usize> = state
        .slots
        .iter()
        .enumerate()
        .filter(|(_, slot)| **slot == Slot::Idle)
        .map(|(i, _)| i)
        .collect();
    let cancelling: Vec<(usize, f64)> = state
        .slots
        .iter()
        .enumerate()
        .filter_map(|(i, slot)| match slot {
            Slot::Cancel { remaining } => Some((i, *remaining as f64 * kernel.unit)),
            _ => None,
        })
        .collect();
    let jobs = job_views(state, kernel.unit);
    let obs = Observation {
        now: 0.0,
        idle_server: idle,
        idle_servers: &idle_servers,
        jobs: &jobs,
        cancelling: &cancelling,
        new_job_available: true,
        system,
    };
    let want = match policy.decide(&obs)? {
        Decision::New => MdpAction::New,
        Decision::Rep(id) => MdpAction::Rep(id as u8),
        Decision::Wait { .. } => return Err(MdpError::IdlingPolicy(policy.to_string())),
    };
    kernel.actions[s]
        .iter()
        .position(|(b, _)| *b == want)
        .ok_or_else(|| MdpError::Table(format!("action {want} not available in {state}")))
}

/// A solved policy keyed by state, usable by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    servers: usize,
    unit: f64,
    table: HashMap<String, MdpAction>,
}

impl TabularPolicy {
    pub fn from_solution(kernel: &TransitionKernel, solution: &MdpSolution) -> Self {
        let table = kernel
            .states
            .iter()
            .enumerate()
            .filter(|(_, st)| st.first_idle().is_some())
            .map(|(s, st)| (st.key(), kernel.actions[s][solution.policy[s]].0))
            .collect();
        Self {
            servers: kernel.servers,
            unit: kernel.unit,
            table,
        }
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn unit(&self) -> f64 {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn action(&self, key: &str) -> Option<MdpAction> {
        self.table.get(key).copied()
    }

    /// Rows `state,action,lattice_unit` sorted by state, with a header.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(&String, &MdpAction)> = self.table.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let mut s = String::from("state,action,lattice_unit\n");
        for (k, a) in rows {
            s.push_str(&format!("{k},{a},{}\n", self.unit));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, MdpError> {
        let bad = |m: String| MdpError::Table(m);
        let mut table = HashMap::new();
        let mut unit = None;
        let mut servers = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("state,") {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(bad(format!("line {}: expected 3 columns", n + 1)));
            }
            let k = cols[0].split('#').next().unwrap_or("").split('|').count();
            if *servers.get_or_insert(k) != k {
                return Err(bad(format!("line {}: state has {k} servers", n + 1)));
            }
            let u: f64 = cols[2]
                .trim()
                .parse()
                .map_err(|_| bad(format!("line {}: bad lattice unit", n + 1)))?;
            if *unit.get_or_insert(u) != u {
                return Err(bad(format!("line {}: lattice unit changes", n + 1)));
            }
            table.insert(cols[0].trim().to_string(), cols[1].parse()?);
        }
        match (servers, unit) {
            (Some(servers), Some(unit)) => Ok(Self { servers, unit, table }),
            _ => Err(bad("empty table".into())),
        }
    }

    fn units(&self, t: f64) -> Result<u32, PolicyError> {
        let n = (t / self.unit).round();
        if (t - n * self.unit).abs() > 1e-6 * self.unit || n < 0.0 {
            return Err(PolicyError::InconsistentObservation(format!(
                "time {t} is off the lattice of step {}",
                self.unit
            )));
        }
        Ok(n as u32)
    }

    /// Looks the observed state up in the table.
    pub fn decide(&self, obs: &Observation<'_>) -> Result<Decision, PolicyError> {
        let k = obs.system.k();
        let mut slots = vec![Slot::Idle; k];
        for j in obs.jobs {
            let label = j.replicas.iter().map(|r| r.server).min().unwrap_or(0) as u8;
            for r in &j.replicas {
                slots[r.server] = Slot::Busy {
                    job: label,
                    elapsed: self.units(r.elapsed)?,
                };
            }
        }
        for &(s, rem) in obs.cancelling {
            slots[s] = Slot::Cancel {
                remaining: self.units(rem)?,
            };
        }
        let state = MdpState { slots, pending: 0 };
        if state.first_idle() != Some(obs.idle_server) {
            return Err(PolicyError::InconsistentObservation(
                "tables assign the lowest idle server first".into(),
            ));
        }
        let key = state.key();
        let action = self
            .table
            .get(&key)
            .ok_or_else(|| PolicyError::InconsistentObservation(format!("state {key} not in table")))?;
        Ok(match action {
            MdpAction::New if obs.new_job_available => Decision::New,
            MdpAction::Rep(label) => {
                let job = obs
                    .jobs
                    .iter()
                    .find(|j| j.replicas.iter().map(|r| r.server).min() == Some(*label as usize))
                    .ok_or_else(|| PolicyError::InconsistentObservation(format!("no job {label}")))?;
                Decision::Rep(job.id)
            }
            _ => Decision::Wait { recheck_after: None },
        })
    }
}
