//! The replication decision process for atomic service laws.
//!
//! When every server's service time takes finitely many values on a common
//! lattice, the system observed at its event times is a finite Markov
//! decision process. A state records, for every server, whether it is idle,
//! serving a copy of some job (and for how long), or sitting in a
//! cancellation window, plus a counter of departures still to be
//! acknowledged when several jobs leave at once.
//!
//! Idle servers are assigned one at a time, lowest index first: a state with
//! an idle server offers `new` or `rep(job)` for each job in flight, and the
//! assignment takes no time. Once no server is idle, time advances to the
//! next completion or end of a cancellation window (the `null` action); the
//! cost of that step is the total server time it consumes. The gain of a
//! policy is its long-run cost per departure, i.e. the mean computing time
//! per job, and the throughput is `K / gain`.

mod solve;
mod state;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::dist::ServiceDistribution;
use crate::policies::PolicyError;

pub use solve::{evaluate_policy, policy_from_instance, solve_average_cost, MdpSolution, TabularPolicy};
pub use state::build_mdp;

pub const DEFAULT_STATE_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("server {server} has a non-atomic law {law}; the decision process needs finite support")]
    NotAtomic { server: usize, law: String },
    #[error("service values do not sit on a common lattice")]
    NonLatticeValues,
    #[error("cancellation delay {delta} is not a multiple of the lattice unit {unit}")]
    NonLatticeDelta { delta: f64, unit: f64 },
    #[error("more than {cap} reachable states")]
    StateExplosion { cap: usize },
    #[error("no convergence after {iters} iterations (span {span:e})")]
    NoConvergence { iters: usize, span: f64 },
    #[error("policy induces {classes} recurrent classes")]
    MultichainDetected { classes: usize },
    #[error("the decision process only models work-conserving rules; `{0}` left a server idle")]
    IdlingPolicy(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("bad policy table: {0}")]
    Table(String),
}

/// What a single server is doing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Idle,
    /// Serving a copy of the job labelled by the lowest server index hosting
    /// it, for `elapsed` lattice units.
    Busy { job: u8, elapsed: u32 },
    /// In a cancellation window with `remaining` units left.
    Cancel { remaining: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MdpState {
    pub slots: Vec<Slot>,
    /// Departures of the last step not yet acknowledged.
    pub pending: u32,
}

impl MdpState {
    pub fn all_idle(k: usize) -> Self {
        Self {
            slots: vec![Slot::Idle; k],
            pending: 0,
        }
    }

    /// The server an action in this state applies to.
    pub fn first_idle(&self) -> Option<usize> {
        if self.pending > 0 {
            return None;
        }
        self.slots.iter().position(|s| *s == Slot::Idle)
    }

    /// Job labels in flight, ascending.
    pub fn jobs(&self) -> Vec<u8> {
        let mut v: Vec<u8> = self
            .slots
            .iter()
            .filter_map(|s| match s {
                Slot::Busy { job, .. } => Some(*job),
                _ => None,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Canonical text key, e.g. `B1:0|I|C2` or `B1:3|B1:3#1` with pending.
    pub fn key(&self) -> String {
        let mut s = String::new();
        for (i, slot) in self.slots.iter().enumerate() {
            if i > 0 {
                s.push('|');
            }
            match slot {
                Slot::Idle => s.push('I'),
                Slot::Busy { job, elapsed } => s.push_str(&format!("B{}:{}", job + 1, elapsed)),
                Slot::Cancel { remaining } => s.push_str(&format!("C{remaining}")),
            }
        }
        if self.pending > 0 {
            s.push_str(&format!("#{}", self.pending));
        }
        s
    }
}

impl fmt::Display for MdpState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MdpAction {
    /// Let time run (no idle server, or departures pending).
    Null,
    New,
    /// Replicate the job with this label onto the first idle server.
    Rep(u8),
}

impl fmt::Display for MdpAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MdpAction::Null => f.write_str("null"),
            MdpAction::New => f.write_str("new"),
            MdpAction::Rep(j) => write!(f, "rep({})", j + 1),
        }
    }
}

impl std::str::FromStr for MdpAction {
    type Err = MdpError;

    fn from_str(s: &str) -> Result<Self, MdpError> {
        match s.trim() {
            "null" => Ok(MdpAction::Null),
            "new" => Ok(MdpAction::New),
            other => other
                .strip_prefix("rep(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|n| n.parse::<u8>().ok())
                .filter(|&n| n >= 1)
                .map(|n| MdpAction::Rep(n - 1))
                .ok_or_else(|| MdpError::Table(format!("unknown action `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub next: usize,
    pub prob: f64,
    /// Expected server time consumed, given this outcome.
    pub cost: f64,
    pub departures: u32,
}

/// Reachable states with, for every state, its admissible actions and their
/// outcome distributions.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    pub states: Vec<MdpState>,
    pub actions: Vec<Vec<(MdpAction, Vec<Outcome>)>>,
    /// Length of one lattice step in time units.
    pub unit: f64,
    pub servers: usize,
    /// Index of the all-idle start state.
    pub initial: usize,
    index: HashMap<MdpState, usize>,
}

impl TransitionKernel {
    pub fn index_of(&self, s: &MdpState) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Atoms of every server in lattice units, the unit, and `Δ` in units.
pub(crate) struct Lattice {
    pub unit: f64,
    pub atoms: Vec<Vec<(u32, f64)>>,
    pub delta: u32,
}

const LATTICE_TOL: f64 = 1e-9;

fn float_gcd(a: f64, b: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (a.max(b), a.min(b));
    while b > tol {
        let mut r = a % b;
        if r < tol || b - r < tol {
            r = 0.0;
        }
        a = b;
        b = r;
    }
    a
}

pub(crate) fn lattice(servers: &[ServiceDistribution], delta: f64) -> Result<Lattice, MdpError> {
    let mut raw = Vec::new();
    for (i, d) in servers.iter().enumerate() {
        match d.atom_list() {
            Some(a) if a.iter().all(|a| a.value > 0.0) => raw.push(a),
            _ => {
                return Err(MdpError::NotAtomic {
                    server: i + 1,
                    law: d.to_string(),
                })
            }
        }
    }
    let max = raw
        .iter()
        .flatten()
        .map(|a| a.value)
        .fold(delta, f64::max);
    let tol = LATTICE_TOL * max;
    let value_unit = raw
        .iter()
        .flatten()
        .map(|a| a.value)
        .fold(0.0, |g, v| if g == 0.0 { v } else { float_gcd(g, v, tol) });
    // more than a million steps per value is not a usable lattice
    let floor = max * 1e-6;
    if value_unit < floor {
        return Err(MdpError::NonLatticeValues);
    }
    let unit = if delta > 0.0 {
        float_gcd(value_unit, delta, tol)
    } else {
        value_unit
    };
    if unit < floor {
        return Err(MdpError::NonLatticeDelta { delta, unit: value_unit });
    }
    let to_units = |v: f64| -> Option<u32> {
        let n = (v / unit).round();
        ((v - n * unit).abs() <= 1e-6 * unit && n <= u32::MAX as f64).then_some(n as u32)
    };
    let mut atoms = Vec::new();
    for a in &raw {
        let mut v = Vec::new();
        for x in a {
            v.push((to_units(x.value).ok_or(MdpError::NonLatticeValues)?, x.prob));
        }
        atoms.push(v);
    }
    let delta_units = to_units(delta).ok_or(MdpError::NonLatticeDelta { delta, unit })?;
    Ok(Lattice {
        unit,
        atoms,
        delta: delta_units,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ServiceDistribution as SD;

    #[test]
    fn lattice_of_example() {
        let ds = vec![
            SD::deterministic(2.0).unwrap(),
            SD::finite([(1.0, 0.9), (20.0, 0.1)]).unwrap(),
        ];
        let l = lattice(&ds, 0.0).unwrap();
        assert_eq!(l.unit, 1.0);
        assert_eq!(l.atoms[1], vec![(1, 0.9), (20, 0.1)]);
        let l = lattice(&ds, 0.5).unwrap();
        assert_eq!(l.unit, 0.5);
        assert_eq!(l.delta, 1);
        assert_eq!(l.atoms[0], vec![(4, 1.0)]);
    }

    #[test]
    fn thirds_share_a_lattice() {
        let ds = vec![SD::finite([(1.0 / 3.0, 0.5), (2.0 / 3.0, 0.5)]).unwrap()];
        let l = lattice(&ds, 0.0).unwrap();
        assert!((l.unit - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_continuous_and_offgrid() {
        let ds = vec![SD::exponential(1.0).unwrap()];
        assert!(matches!(lattice(&ds, 0.0), Err(MdpError::NotAtomic { .. })));
        let ds = vec![SD::deterministic(1.0).unwrap()];
        assert!(matches!(
            lattice(&ds, std::f64::consts::PI * 1e-3),
            Err(MdpError::NonLatticeDelta { .. })
        ));
    }

    #[test]
    fn action_text_roundtrip() {
        for a in [MdpAction::Null, MdpAction::New, MdpAction::Rep(0), MdpAction::Rep(3)] {
            assert_eq!(a.to_string().parse::<MdpAction>().unwrap(), a);
        }
        assert!("rep(0)".parse::<MdpAction>().is_err());
    }
}
