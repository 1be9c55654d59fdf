//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use replicap::analytic::{
    best_homogeneous_r, throughput_fullrep, throughput_norep, throughput_upfront, Partition,
};
use replicap::bounds::{
    adarep_pause_throughput, corollary_throughput, homogeneous_bound, optimize_pause_bound, MinimizerConfig,
    ThresholdGrid, ThresholdPair,
};
use replicap::engine::{event_trace, run_poisson, run_saturated};
use replicap::mdp::{build_mdp, solve_average_cost, TabularPolicy, DEFAULT_STATE_CAP};
use replicap::policies::{AdaRepThresholds, MaxRateDelta, PolicyInstance};
use replicap::{ServiceDistribution as SD, SystemConfig};

/// Renewal-reward value of AdaRep(inf, 1) on the example: 2.9 / 2.38.
const ADAREP_EXAMPLE: f64 = 2.9 / 2.38;
/// Rounding allowance for identities that hold exactly on every path
/// (the batch stderr is then zero up to float noise).
const FLOAT_FLOOR: f64 = 1e-9;

fn report(n: u32, pass: bool, started: Instant, limit: Duration, detail: &str) {
    let took = started.elapsed();
    let ok = pass && took <= limit;
    println!(
        "criterion {n}: {} ({:.1}s, limit {}s) {detail}",
        if ok { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        limit.as_secs()
    );
    assert!(ok, "criterion {n} failed: {detail}");
}

fn example(p: f64) -> SystemConfig {
    SystemConfig::new(
        vec![
            SD::deterministic(2.0).unwrap(),
            SD::finite([(1.0, 1.0 - p), (20.0, p)]).unwrap(),
        ],
        0.0,
    )
    .unwrap()
}

fn adarep(t12: f64, t21: f64) -> PolicyInstance {
    PolicyInstance::AdaRep(AdaRepThresholds::pair(t12, t21))
}

fn p_sweep() -> Vec<f64> {
    (1..=10).map(|i| i as f64 * 0.05).collect()
}

#[test]
fn criterion_01_example_norep_fullrep() {
    let t = Instant::now();
    let sys = example(0.1);
    let n = throughput_norep(&sys.servers).unwrap().value;
    let f = throughput_fullrep(&sys.servers, 0.0).unwrap().value;
    let pass = (n - 0.84483).abs() <= 1e-4 && (f - 0.90909).abs() <= 1e-4;
    report(1, pass, t, Duration::from_secs(1), &format!("norep {n:.6} fullrep {f:.6}"));
}

#[test]
fn criterion_02_example_adarep_simulation() {
    let t = Instant::now();
    let r = run_saturated(&example(0.1), &adarep(f64::INFINITY, 1.0), 1_000_000, 2024).unwrap();
    let rel = (r.throughput - ADAREP_EXAMPLE).abs() / ADAREP_EXAMPLE;
    report(
        2,
        rel <= 0.005,
        t,
        Duration::from_secs(60),
        &format!("throughput {:.5} ± {:.5}, relative error {rel:.2e}", r.throughput, r.throughput_stderr),
    );
}

fn random_law(rng: &mut ChaCha8Rng) -> SD {
    match rng.random_range(0..6) {
        0 => SD::exponential(rng.random_range(0.5..2.0)).unwrap(),
        1 => SD::shifted_exp(rng.random_range(0.1..1.0), rng.random_range(0.5..2.0)).unwrap(),
        2 => SD::hyper_exp(rng.random_range(0.5..2.0), rng.random_range(0.05..0.3), rng.random_range(0.1..0.5)).unwrap(),
        3 => SD::pareto(rng.random_range(0.3..1.0), rng.random_range(2.5..4.0)).unwrap(),
        4 => {
            let p = rng.random_range(0.05..0.4);
            SD::finite([(rng.random_range(0.5..1.5), 1.0 - p), (rng.random_range(3.0..12.0), p)]).unwrap()
        }
        _ => SD::shifted(rng.random_range(0.0..0.5), SD::exponential(rng.random_range(0.5..3.0)).unwrap()).unwrap(),
    }
}

fn random_partition(rng: &mut ChaCha8Rng, k: usize) -> Partition {
    let mut rgs = vec![0usize];
    for i in 1..k {
        let top = *rgs.iter().max().unwrap();
        rgs.push(rng.random_range(0..=(top + 1).min(i)));
    }
    Partition::from_rgs(&rgs)
}

#[test]
fn criterion_03_work_conservation() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    let mut pass = true;
    for i in 0..20 {
        let k = rng.random_range(2..=4);
        let servers: Vec<SD> = (0..k).map(|_| random_law(&mut rng)).collect();
        let delta = [0.0, 0.1, 0.5][rng.random_range(0..3)];
        let policy = match rng.random_range(0..5) {
            0 => PolicyInstance::NoRep,
            1 => PolicyInstance::FullRep,
            2 => PolicyInstance::Upfront(random_partition(&mut rng, k)),
            3 => PolicyInstance::MaxRate(MaxRateDelta::Include),
            _ => {
                let mut taus = vec![rng.random_range(0.0..2.0)];
                for _ in 1..k - 1 {
                    let last = *taus.last().unwrap();
                    taus.push(last + rng.random_range(0.0..2.0));
                }
                PolicyInstance::AdaRep(AdaRepThresholds::homogeneous(taus).unwrap())
            }
        };
        let sys = SystemConfig::new(servers, delta).unwrap();
        let r = run_saturated(&sys, &policy, 200_000, 100 + i).unwrap();
        let dev = (r.busy_servers - k as f64).abs();
        if dev > FLOAT_FLOOR {
            worst = worst.max(dev / r.busy_servers_stderr);
        }
        if !(dev <= 3.0 * r.busy_servers_stderr + FLOAT_FLOOR) {
            pass = false;
        }
        lines.push(format!("{policy} K={k} Δ={delta}: {:.5} ± {:.5}", r.busy_servers, r.busy_servers_stderr));
    }
    for l in &lines {
        println!("  {l}");
    }
    report(3, pass, t, Duration::from_secs(300), &format!("20 configurations, worst |R·E[C] - K| = {worst:.2} stderr"));
}

#[test]
fn criterion_04_simulation_matches_closed_forms() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut pass = true;
    let mut worst = 0.0f64;
    let mut n = 0;
    for i in 0..10u64 {
        let k = rng.random_range(2..=4);
        let servers: Vec<SD> = (0..k).map(|_| random_law(&mut rng)).collect();
        let delta = [0.0, 0.2][rng.random_range(0..2)];
        let sys = SystemConfig::new(servers.clone(), delta).unwrap();
        let part = random_partition(&mut rng, k);
        let cases = [
            (PolicyInstance::NoRep, throughput_norep(&servers).unwrap().value),
            (PolicyInstance::FullRep, throughput_fullrep(&servers, delta).unwrap().value),
            (PolicyInstance::Upfront(part.clone()), throughput_upfront(&part, &servers, delta).unwrap().value),
        ];
        for (j, (policy, want)) in cases.into_iter().enumerate() {
            let r = run_saturated(&sys, &policy, 200_000, 4000 + 3 * i + j as u64).unwrap();
            let z = (r.throughput - want).abs() / r.throughput_stderr;
            worst = worst.max(z);
            n += 1;
            if !(z <= 3.0) {
                pass = false;
                println!("  {policy} on {:?} Δ={delta}: sim {} ± {} vs {want}", servers, r.throughput, r.throughput_stderr);
            }
        }
    }
    report(4, pass, t, Duration::from_secs(300), &format!("{n} cases, worst deviation {worst:.2} stderr"));
}

#[test]
fn criterion_05_best_group_size() {
    let t = Instant::now();
    let a = best_homogeneous_r(&SD::shifted_exp(0.1, 1.0).unwrap(), 0.0, 10).unwrap();
    let b = best_homogeneous_r(&SD::hyper_exp(0.6, 0.2, 0.4).unwrap(), 0.0, 10).unwrap();
    report(
        5,
        a.r == 1 && b.r == 10,
        t,
        Duration::from_secs(1),
        &format!("shifted exponential r*={}, hyperexponential r*={}", a.r, b.r),
    );
}

#[test]
fn criterion_06_start_time_bound() {
    let t = Instant::now();
    let cfg = MinimizerConfig::default();
    let e = homogeneous_bound(&SD::exponential(1.0).unwrap(), 0.5, 2, &cfg).unwrap();
    let mut det_ok = true;
    for (k, c) in [(2, 1.0), (4, 1.5), (10, 0.7)] {
        let r = homogeneous_bound(&SD::deterministic(c).unwrap(), 0.0, k, &cfg).unwrap();
        det_ok &= r.value == k as f64 / c;
    }
    let pass = (e.value - 2.0).abs() <= 1e-3 && e.thresholds == vec![f64::INFINITY] && det_ok;
    report(
        6,
        pass,
        t,
        Duration::from_secs(60),
        &format!("exponential pair {:.6} at t2={:?}; deterministic K/c exact: {det_ok}", e.value, e.thresholds),
    );
}

#[test]
fn criterion_07_pause_bound_dominates() {
    let t = Instant::now();
    let mut pass = true;
    let mut t21_at_01 = f64::NAN;
    for (i, p) in p_sweep().into_iter().enumerate() {
        let sys = example(p);
        let grid = ThresholdGrid::for_laws(&sys.servers).unwrap();
        let b = optimize_pause_bound(&sys.servers, 0.0, &grid).unwrap();
        if (p - 0.1).abs() < 1e-12 {
            t21_at_01 = b.thresholds[1];
        }
        let policies = [
            adarep(b.thresholds[0], b.thresholds[1]),
            adarep(f64::INFINITY, 1.0),
            PolicyInstance::MaxRate(MaxRateDelta::Include),
        ];
        let mut line = format!("  p={p:.2} bound {:.5} at {:?}:", b.value, b.thresholds);
        for (j, pol) in policies.iter().enumerate() {
            let r = run_saturated(&sys, pol, 200_000, 7000 + 10 * i as u64 + j as u64).unwrap();
            line.push_str(&format!(" {pol} {:.5}", r.throughput));
            if r.throughput - 3.0 * r.throughput_stderr > b.value {
                pass = false;
                line.push_str(" (exceeds)");
            }
        }
        println!("{line}");
    }
    pass &= t21_at_01 == 1.0;
    report(7, pass, t, Duration::from_secs(600), &format!("t*_2->1 at p=0.1 is {t21_at_01}"));
}

#[test]
fn criterion_08_maxrate_is_best_extreme() {
    let t = Instant::now();
    let mut pass = true;
    let mut worst = 0.0f64;
    for (i, p) in p_sweep().into_iter().enumerate() {
        let sys = example(p);
        let want = throughput_norep(&sys.servers)
            .unwrap()
            .value
            .max(throughput_fullrep(&sys.servers, 0.0).unwrap().value);
        let r = run_saturated(&sys, &PolicyInstance::MaxRate(MaxRateDelta::Include), 200_000, 8000 + i as u64).unwrap();
        let z = (r.throughput - want).abs() / r.throughput_stderr;
        worst = worst.max(z);
        println!("  p={p:.2} maxrate {:.5} ± {:.5}, max(norep, fullrep) {want:.5}", r.throughput, r.throughput_stderr);
        if !(z <= 3.0) {
            pass = false;
        }
    }
    report(8, pass, t, Duration::from_secs(600), &format!("worst deviation {worst:.2} stderr"));
}

#[test]
fn criterion_09_mdp_sandwich() {
    let t = Instant::now();
    let sys = example(0.1);
    let kernel = build_mdp(&sys, DEFAULT_STATE_CAP).unwrap();
    let sol = solve_average_cost(&kernel, 1e-10, 1_000_000).unwrap();
    let grid = ThresholdGrid::for_laws(&sys.servers).unwrap();
    let bound = optimize_pause_bound(&sys.servers, 0.0, &grid).unwrap().value;
    let table = TabularPolicy::from_solution(&kernel, &sol);
    let r = run_saturated(&sys, &PolicyInstance::Tabular(Arc::new(table)), 1_000_000, 909).unwrap();
    let z = (r.throughput - sol.throughput).abs() / r.throughput_stderr;
    let pass = ADAREP_EXAMPLE - FLOAT_FLOOR <= sol.throughput && sol.throughput <= bound && z <= 3.0;
    report(
        9,
        pass,
        t,
        Duration::from_secs(300),
        &format!(
            "optimum K/g {:.6} over {} states, pause bound {bound:.6}, simulated {:.5} ± {:.5}",
            sol.throughput,
            kernel.len(),
            r.throughput,
            r.throughput_stderr
        ),
    );
}

#[test]
fn criterion_10_response_times() {
    let t = Instant::now();
    let sys = example(0.1);
    let policies = [
        PolicyInstance::NoRep,
        PolicyInstance::FullRep,
        PolicyInstance::MaxRate(MaxRateDelta::Include),
        adarep(f64::INFINITY, 1.0),
    ];
    let mut lowest_everywhere = true;
    let mut norep_flags = true;
    let mut losses = Vec::new();
    for i in 1..=11 {
        let lambda = i as f64 * 0.1;
        let mut means = Vec::new();
        let mut line = format!("  λ={lambda:.1}:");
        for (j, pol) in policies.iter().enumerate() {
            let r = run_poisson(&sys, pol, lambda, 1000, 100, 10_000 + 10 * i + j as u64).unwrap();
            let m = r.mean_response.unwrap();
            line.push_str(&format!(" {pol} {m:.3}{}", if r.unstable { " (unstable)" } else { "" }));
            means.push(m);
            if j == 0 && lambda > 0.85 && !r.unstable {
                norep_flags = false;
            }
        }
        println!("{line}");
        let ada = means[3];
        if means[..3].iter().any(|&m| m < ada) {
            lowest_everywhere = false;
            losses.push(format!("{lambda:.1}"));
        }
    }
    report(
        10,
        lowest_everywhere && norep_flags,
        t,
        Duration::from_secs(600),
        &format!(
            "adarep lowest everywhere: {lowest_everywhere} (beaten at λ in [{}]); norep flagged above 0.85: {norep_flags}",
            losses.join(", ")
        ),
    );
}

#[test]
fn criterion_11_properties() {
    let t = Instant::now();
    let mut failures = Vec::new();

    // distribution identities
    let laws = [
        SD::exponential(1.3).unwrap(),
        SD::shifted_exp(0.5, 1.0).unwrap(),
        SD::hyper_exp(0.6, 0.2, 0.4).unwrap(),
        SD::pareto(0.5, 2.2).unwrap(),
        SD::finite([(1.0, 0.9), (20.0, 0.1)]).unwrap(),
    ];
    for d in &laws {
        let m = d.mean().unwrap();
        if (d.truncated_mean(f64::INFINITY).unwrap() - m).abs() > 1e-12 * m {
            failures.push(format!("truncated mean at inf for {d}"));
        }
        for age in [0.3, 1.0, 2.5] {
            // E[X] = E[min(X, a)] + P(X > a) E[X - a | X > a]
            let split = d.truncated_mean(age).unwrap() + d.tail(age) * d.residual(age).unwrap().mean().unwrap();
            if (split - m).abs() > 1e-8 * m {
                failures.push(format!("mean split at {age} for {d}: {split} vs {m}"));
            }
        }
    }

    // corollary form equals the general pause formula with t_1->2 = inf
    for p in [0.05, 0.2, 0.45] {
        let sys = example(p);
        for t21 in [0.0, 0.5, 1.0, 3.0, 20.0, f64::INFINITY] {
            for delta in [0.0, 0.3] {
                let a = corollary_throughput(&sys.servers, delta, t21).unwrap();
                let b = adarep_pause_throughput(&sys.servers, delta, ThresholdPair::new(f64::INFINITY, t21).unwrap())
                    .unwrap();
                if (a - b).abs() > 1e-9 {
                    failures.push(format!("corollary at p={p} t={t21} Δ={delta}: {a} vs {b}"));
                }
            }
        }
    }

    // AdaRep with every threshold infinite follows NoRep exactly
    for (seed, sys) in [(1, example(0.1)), (2, example(0.4))] {
        let a = event_trace(&sys, &adarep(f64::INFINITY, f64::INFINITY), 200.0, seed).unwrap();
        let b = event_trace(&sys, &PolicyInstance::NoRep, 200.0, seed).unwrap();
        if a != b {
            failures.push(format!("adarep(inf, inf) trace differs from norep at seed {seed}"));
        }
        let a = run_poisson(&sys, &adarep(f64::INFINITY, f64::INFINITY), 0.6, 300, 4, seed).unwrap();
        let b = run_poisson(&sys, &PolicyInstance::NoRep, 0.6, 300, 4, seed).unwrap();
        if a.mean_response != b.mean_response {
            failures.push(format!("adarep(inf, inf) responses differ from norep at seed {seed}"));
        }
    }

    // same seed, same trace
    let sys = example(0.1);
    for pol in [PolicyInstance::MaxRate(MaxRateDelta::Include), adarep(f64::INFINITY, 1.0)] {
        if event_trace(&sys, &pol, 300.0, 5).unwrap() != event_trace(&sys, &pol, 300.0, 5).unwrap() {
            failures.push(format!("{pol} trace not reproducible"));
        }
    }

    for f in &failures {
        println!("  {f}");
    }
    report(11, failures.is_empty(), t, Duration::from_secs(300), &format!("{} failures", failures.len()));
}
