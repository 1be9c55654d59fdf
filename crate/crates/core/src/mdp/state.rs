use std::collections::{HashMap, VecDeque};

use super::{lattice, Lattice, MdpAction, MdpError, MdpState, Outcome, Slot, TransitionKernel};
use crate::system::SystemConfig;

/// Enumerates every state reachable from the all-idle state under some
/// policy, breadth first.
pub fn build_mdp(system: &SystemConfig, cap: usize) -> Result<TransitionKernel, MdpError> {
    let lat = lattice(&system.servers, system.delta)?;
    let k = system.k();
    if k > u8::MAX as usize {
        return Err(MdpError::StateExplosion { cap });
    }
    let start = MdpState::all_idle(k);
    let mut index = HashMap::new();
    let mut states = vec![start.clone()];
    index.insert(start, 0usize);
    let mut actions = Vec::new();
    let mut queue = VecDeque::from([0usize]);

    while let Some(si) = queue.pop_front() {
        let s = states[si].clone();
        let raw = transitions(&s, &lat, k);
        let mut acts = Vec::with_capacity(raw.len());
        for (a, outs) in raw {
            let mut resolved = Vec::with_capacity(outs.len());
            for (next, prob, cost, departures) in outs {
                let ni = match index.get(&next) {
                    Some(&i) => i,
                    None => {
                        let i = states.len();
                        if i >= cap {
                            return Err(MdpError::StateExplosion { cap });
                        }
                        index.insert(next.clone(), i);
                        states.push(next);
                        queue.push_back(i);
                        i
                    }
                };
                resolved.push(Outcome {
                    next: ni,
                    prob,
                    cost,
                    departures,
                });
            }
            acts.push((a, resolved));
        }
        // states are discovered in index order, so this push lines up
        debug_assert_eq!(actions.len(), si);
        actions.push(acts);
    }

    Ok(TransitionKernel {
        states,
        actions,
        unit: lat.unit,
        servers: k,
        initial: 0,
        index,
    })
}

type RawOutcome = (MdpState, f64, f64, u32);

fn transitions(s: &MdpState, lat: &Lattice, k: usize) -> Vec<(MdpAction, Vec<RawOutcome>)> {
    if s.pending > 0 {
        let next = MdpState {
            slots: s.slots.clone(),
            pending: s.pending - 1,
        };
        return vec![(MdpAction::Null, vec![(next, 1.0, 0.0, 1)])];
    }
    if let Some(i) = s.first_idle() {
        let mut out = Vec::new();
        let mut slots = s.slots.clone();
        slots[i] = Slot::Busy {
            job: i as u8,
            elapsed: 0,
        };
        out.push((MdpAction::New, vec![(MdpState { slots, pending: 0 }, 1.0, 0.0, 0)]));
        for j in s.jobs() {
            let label = j.min(i as u8);
            let mut slots = s.slots.clone();
            slots[i] = Slot::Busy { job: j, elapsed: 0 };
            for slot in &mut slots {
                if let Slot::Busy { job, .. } = slot {
                    if *job == j {
                        *job = label;
                    }
                }
            }
            out.push((MdpAction::Rep(j), vec![(MdpState { slots, pending: 0 }, 1.0, 0.0, 0)]));
        }
        return out;
    }
    vec![(MdpAction::Null, advance(s, lat, k))]
}

/// Law of a job's remaining time: `(value, P(D = value))` ascending, built
/// from the residual atoms of each of its copies.
fn remaining_law(s: &MdpState, lat: &Lattice, job: u8) -> Vec<(u32, f64)> {
    let copies: Vec<(usize, u32)> = s
        .slots
        .iter()
        .enumerate()
        .filter_map(|(srv, slot)| match slot {
            Slot::Busy { job: j, elapsed } if *j == job => Some((srv, *elapsed)),
            _ => None,
        })
        .collect();
    let residuals: Vec<Vec<(u32, f64)>> = copies
        .iter()
        .map(|&(srv, e)| {
            let alive: Vec<(u32, f64)> = lat.atoms[srv]
                .iter()
                .filter(|a| a.0 > e)
                .map(|&(v, p)| (v - e, p))
                .collect();
            let mass: f64 = alive.iter().map(|a| a.1).sum();
            alive.into_iter().map(|(v, p)| (v, p / mass)).collect()
        })
        .collect();
    let mut support: Vec<u32> = residuals.iter().flatten().map(|a| a.0).collect();
    support.sort_unstable();
    support.dedup();
    let tail_at = |v: u32| -> f64 {
        residuals
            .iter()
            .map(|r| r.iter().filter(|a| a.0 > v).map(|a| a.1).sum::<f64>())
            .product()
    };
    let mut out = Vec::with_capacity(support.len());
    let mut above_prev = 1.0;
    for v in support {
        let above = tail_at(v);
        let p = above_prev - above;
        if p > 0.0 {
            out.push((v, p));
        }
        above_prev = above;
    }
    out
}

fn advance(s: &MdpState, lat: &Lattice, k: usize) -> Vec<RawOutcome> {
    let jobs = s.jobs();
    let laws: Vec<Vec<(u32, f64)>> = jobs.iter().map(|&j| remaining_law(s, lat, j)).collect();
    let horizon = s
        .slots
        .iter()
        .filter_map(|slot| match slot {
            Slot::Cancel { remaining } => Some(*remaining),
            _ => None,
        })
        .min();

    let mut times: Vec<u32> = laws.iter().flatten().map(|a| a.0).collect();
    times.extend(horizon);
    times.sort_unstable();
    times.dedup();
    if let Some(h) = horizon {
        times.retain(|&x| x <= h);
    }

    let mut merged: Vec<RawOutcome> = Vec::new();
    let mut slot_of: HashMap<(MdpState, u32), usize> = HashMap::new();
    for &x in &times {
        let at: Vec<f64> = laws
            .iter()
            .map(|l| l.iter().find(|a| a.0 == x).map_or(0.0, |a| a.1))
            .collect();
        let beyond: Vec<f64> = laws
            .iter()
            .map(|l| l.iter().filter(|a| a.0 > x).map(|a| a.1).sum())
            .collect();
        for subset in 0u32..(1 << jobs.len()) {
            if subset == 0 && Some(x) != horizon {
                continue;
            }
            let mut prob = 1.0;
            for (n, _) in jobs.iter().enumerate() {
                prob *= if subset >> n & 1 == 1 { at[n] } else { beyond[n] };
                if prob == 0.0 {
                    break;
                }
            }
            if prob <= 0.0 {
                continue;
            }
            let done: Vec<u8> = jobs
                .iter()
                .enumerate()
                .filter(|(n, _)| subset >> n & 1 == 1)
                .map(|(_, &j)| j)
                .collect();
            let (next, departures) = step(s, x, &done, lat.delta);
            let cost = k as f64 * x as f64 * lat.unit;
            match slot_of.get(&(next.clone(), departures)) {
                Some(&m) => {
                    let e = &mut merged[m];
                    e.2 = (e.2 * e.1 + cost * prob) / (e.1 + prob);
                    e.1 += prob;
                }
                None => {
                    slot_of.insert((next.clone(), departures), merged.len());
                    merged.push((next, prob, cost, departures));
                }
            }
        }
    }
    merged
}

/// State after `x` units in which the jobs in `done` complete.
fn step(s: &MdpState, x: u32, done: &[u8], delta: u32) -> (MdpState, u32) {
    let copies = |j: u8| {
        s.slots
            .iter()
            .filter(|slot| matches!(slot, Slot::Busy { job, .. } if *job == j))
            .count()
    };
    let slots = s
        .slots
        .iter()
        .map(|slot| match *slot {
            Slot::Idle => Slot::Idle,
            Slot::Busy { job, elapsed } => {
                if done.contains(&job) {
                    if copies(job) >= 2 && delta > 0 {
                        Slot::Cancel { remaining: delta }
                    } else {
                        Slot::Idle
                    }
                } else {
                    Slot::Busy {
                        job,
                        elapsed: elapsed + x,
                    }
                }
            }
            Slot::Cancel { remaining } => {
                if remaining > x {
                    Slot::Cancel {
                        remaining: remaining - x,
                    }
                } else {
                    Slot::Idle
                }
            }
        })
        .collect();
    let d = done.len() as u32;
    (
        MdpState {
            slots,
            pending: d.saturating_sub(1),
        },
        d.min(1),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ServiceDistribution as SD;
    use crate::mdp::DEFAULT_STATE_CAP;

    fn example(delta: f64) -> SystemConfig {
        SystemConfig::new(
            vec![
                SD::deterministic(2.0).unwrap(),
                SD::finite([(1.0, 0.9), (20.0, 0.1)]).unwrap(),
            ],
            delta,
        )
        .unwrap()
    }

    fn follow(k: &TransitionKernel, s: usize, a: MdpAction) -> &Vec<Outcome> {
        &k.actions[s].iter().find(|(b, _)| *b == a).unwrap().1
    }

    #[test]
    fn rows_sum_to_one_and_pending_states_are_null() {
        let k = build_mdp(&example(0.0), DEFAULT_STATE_CAP).unwrap();
        for (s, acts) in k.actions.iter().enumerate() {
            assert!(!acts.is_empty());
            if k.states[s].pending > 0 {
                assert_eq!(acts.len(), 1);
                assert_eq!(acts[0].0, MdpAction::Null);
            } else if k.states[s].first_idle().is_some() {
                assert_eq!(acts.len(), k.states[s].jobs().len() + 1);
            }
            for (_, outs) in acts {
                let total: f64 = outs.iter().map(|o| o.prob).sum();
                assert!((total - 1.0).abs() < 1e-12);
                assert!(outs.iter().all(|o| o.cost >= 0.0));
            }
        }
    }

    #[test]
    fn replicated_start_returns_with_expected_cost() {
        let k = build_mdp(&example(0.0), DEFAULT_STATE_CAP).unwrap();
        let s1 = follow(&k, k.initial, MdpAction::New)[0].next;
        let s2 = follow(&k, s1, MdpAction::Rep(0))[0].next;
        assert_eq!(k.states[s2].key(), "B1:0|B1:0");
        let outs = follow(&k, s2, MdpAction::Null);
        assert_eq!(outs.len(), 1);
        assert_eq!(outs[0].next, k.initial);
        assert!((outs[0].cost - 2.2).abs() < 1e-12);
        assert_eq!(outs[0].departures, 1);
    }

    #[test]
    fn contains_the_straggler_state() {
        // server 1 starts over while server 2 keeps working on its job
        let k = build_mdp(&example(0.0), DEFAULT_STATE_CAP).unwrap();
        let s = MdpState {
            slots: vec![Slot::Idle, Slot::Busy { job: 1, elapsed: 2 }],
            pending: 0,
        };
        assert!(k.index_of(&s).is_some());
    }

    #[test]
    fn single_server() {
        let sys = SystemConfig::new(vec![SD::finite([(1.0, 0.5), (3.0, 0.5)]).unwrap()], 0.0).unwrap();
        let k = build_mdp(&sys, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(k.len(), 2);
        let busy = follow(&k, 0, MdpAction::New)[0].next;
        let outs = follow(&k, busy, MdpAction::Null);
        assert_eq!(outs.len(), 1);
        assert!((outs[0].cost - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cancellation_windows_occupy_servers() {
        let k = build_mdp(&example(1.0), DEFAULT_STATE_CAP).unwrap();
        let s1 = follow(&k, k.initial, MdpAction::New)[0].next;
        let s2 = follow(&k, s1, MdpAction::Rep(0))[0].next;
        let outs = follow(&k, s2, MdpAction::Null);
        assert!(outs.iter().all(|o| k.states[o.next].key() == "C1|C1"));
        let c = outs[0].next;
        let back = follow(&k, c, MdpAction::Null);
        assert_eq!(back[0].next, k.initial);
        assert!((back[0].cost - 2.0).abs() < 1e-12);
    }

    #[test]
    fn simultaneous_departures_chain_through_pending() {
        let sys = SystemConfig::homogeneous(SD::deterministic(1.0).unwrap(), 2, 0.0).unwrap();
        let k = build_mdp(&sys, DEFAULT_STATE_CAP).unwrap();
        let s1 = follow(&k, k.initial, MdpAction::New)[0].next;
        let s2 = follow(&k, s1, MdpAction::New)[0].next;
        let outs = follow(&k, s2, MdpAction::Null);
        assert_eq!(outs.len(), 1);
        assert_eq!(k.states[outs[0].next].pending, 1);
        assert_eq!(outs[0].departures, 1);
    }

    #[test]
    fn state_cap_is_enforced() {
        assert!(matches!(
            build_mdp(&example(0.0), 5),
            Err(MdpError::StateExplosion { cap: 5 })
        ));
    }
}
