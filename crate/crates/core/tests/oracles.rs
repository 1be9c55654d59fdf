//! Independent checks of closed forms: renewal simulations written from
//! scratch here, and exact evaluation on the decision process.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use replicap::bounds::{adarep_pause_throughput, ThresholdPair};
use replicap::engine::run_saturated;
use replicap::mdp::{build_mdp, evaluate_policy, policy_from_instance, DEFAULT_STATE_CAP};
use replicap::policies::{AdaRepThresholds, PolicyInstance};
use replicap::{ServiceDistribution as SD, SystemConfig};

fn example(p: f64) -> Vec<SD> {
    vec![
        SD::deterministic(2.0).unwrap(),
        SD::finite([(1.0, 1.0 - p), (20.0, p)]).unwrap(),
    ]
}

/// Pause-and-replicate with `t_1->2 = inf`: server 2 runs its own jobs and,
/// past `t21`, borrows server 1 (pausing it) until the replica race and the
/// cancellation window end. Server 1 only progresses while not borrowed.
fn pause_renewals(ds: &[SD], delta: f64, t21: f64, renewals: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut time = 0.0;
    let mut done = 0usize;
    let mut left1 = ds[0].sample(&mut rng);
    let progress = |mut dt: f64, done: &mut usize, left1: &mut f64, rng: &mut ChaCha8Rng| {
        while dt >= *left1 {
            dt -= *left1;
            *done += 1;
            *left1 = ds[0].sample(rng);
        }
        *left1 -= dt;
    };
    for _ in 0..renewals {
        let x2 = ds[1].sample(&mut rng);
        if x2 <= t21 {
            progress(x2, &mut done, &mut left1, &mut rng);
            time += x2;
        } else {
            progress(t21, &mut done, &mut left1, &mut rng);
            let fresh = ds[0].sample(&mut rng);
            time += t21 + (x2 - t21).min(fresh) + delta;
        }
        done += 1;
    }
    done as f64 / time
}

#[test]
fn pause_throughput_matches_renewal_simulation() {
    for (p, delta, t21) in [(0.1, 0.0, 1.0), (0.3, 0.0, 1.0), (0.1, 0.25, 1.0), (0.2, 0.0, 5.0)] {
        let ds = example(p);
        let exact = adarep_pause_throughput(&ds, delta, ThresholdPair::new(f64::INFINITY, t21).unwrap()).unwrap();
        let mc = pause_renewals(&ds, delta, t21, 1_000_000, 17);
        assert!((mc - exact).abs() / exact < 0.003, "p={p} Δ={delta} t={t21}: {mc} vs {exact}");
    }
}

#[test]
fn pause_value_at_threshold_one() {
    let v = adarep_pause_throughput(&example(0.1), 0.0, ThresholdPair::new(f64::INFINITY, 1.0).unwrap()).unwrap();
    let mc = pause_renewals(&example(0.1), 0.0, 1.0, 1_000_000, 99);
    assert!((v - 1.25).abs() < 1e-12);
    assert!((mc - 1.25).abs() / 1.25 < 0.003, "{mc}");
}

/// Renewal-reward value of AdaRep(inf, 1) on the example with straggler
/// probability `p` (renewals at instants when both servers are idle).
fn adarep_closed_form(p: f64) -> f64 {
    let q = 1.0 - p;
    (3.0 * q + 2.0 * p) / (2.0 * q * q + 4.0 * p * (q + 1.0))
}

#[test]
fn adarep_example_on_decision_process() {
    for p in [0.05, 0.1, 0.25, 0.5] {
        let sys = SystemConfig::new(example(p), 0.0).unwrap();
        let k = build_mdp(&sys, DEFAULT_STATE_CAP).unwrap();
        let pol = PolicyInstance::AdaRep(AdaRepThresholds::pair(f64::INFINITY, 1.0));
        let idx = policy_from_instance(&k, &sys, &pol).unwrap();
        let gain = evaluate_policy(&k, &idx).unwrap();
        let want = adarep_closed_form(p);
        assert!((2.0 / gain - want).abs() < 1e-9, "p={p}: {} vs {want}", 2.0 / gain);
        let r = run_saturated(&sys, &pol, 300_000, 5).unwrap();
        assert!((r.throughput - want).abs() < 3.0 * r.throughput_stderr, "p={p}: {r:?}");
    }
    assert!((adarep_closed_form(0.1) - 2.9 / 2.38).abs() < 1e-15);
}
