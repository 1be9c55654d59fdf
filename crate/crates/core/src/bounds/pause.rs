//! Two servers that may pause a running job to host a replica.
//!
//! Under threshold rule `t = [t_1->2, t_2->1]` a job started on server `i`
//! is replicated on the other server once it has run `t_i->j`, pausing
//! whatever that server was doing. Renewal arguments give its throughput in
//! closed form, and the best thresholds bound the capacity of the system
//! without pausing.

use super::{default_grid, normalize_grid, BoundError, BoundReport};
use crate::dist::{min_expectation, ServiceDistribution, TailLaw};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPair {
    pub t12: f64,
    pub t21: f64,
}

impl ThresholdPair {
    pub fn new(t12: f64, t21: f64) -> Result<Self, BoundError> {
        if !(t12 >= 0.0 && t21 >= 0.0) {
            return Err(BoundError::Invalid(format!("thresholds must be >= 0, got [{t12}, {t21}]")));
        }
        Ok(Self { t12, t21 })
    }
}

fn check_pair(ds: &[ServiceDistribution]) -> Result<(&ServiceDistribution, &ServiceDistribution), BoundError> {
    match ds {
        [a, b] => Ok((a, b)),
        _ => Err(BoundError::Invalid(format!("the pause bound needs two servers, got {}", ds.len()))),
    }
}

fn check_delta(delta: f64) -> Result<(), BoundError> {
    if delta >= 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(BoundError::Invalid(format!("cancellation delay {delta} must be finite and >= 0")))
    }
}

/// `P(X > t) * (Δ + E[min(residual of X after t, other)])`: the expected
/// time a job of this server keeps both servers busy.
fn replicated_part(
    own: &ServiceDistribution,
    other: &ServiceDistribution,
    t: f64,
    delta: f64,
) -> Result<f64, BoundError> {
    let tail = own.tail(t);
    if tail == 0.0 {
        return Ok(0.0);
    }
    let res = own.residual(t)?;
    let m = min_expectation(&[&res as &dyn TailLaw, other as &dyn TailLaw])?;
    Ok(tail * (delta + m))
}

fn truncated(d: &ServiceDistribution, t: f64, server: usize) -> Result<f64, BoundError> {
    let a = d.truncated_mean(t)?;
    if a <= 0.0 {
        return Err(BoundError::DegenerateTruncation { server, threshold: t });
    }
    Ok(a)
}

/// Throughput of the threshold rule `t` with pausing.
pub fn adarep_pause_throughput(
    ds: &[ServiceDistribution],
    delta: f64,
    t: ThresholdPair,
) -> Result<f64, BoundError> {
    let (x1, x2) = check_pair(ds)?;
    check_delta(delta)?;
    if t.t12 == 0.0 || t.t21 == 0.0 {
        let m = min_expectation(&[x1 as &dyn TailLaw, x2 as &dyn TailLaw])?;
        return Ok(1.0 / (delta + m));
    }
    let a1 = truncated(x1, t.t12, 1)?;
    let a2 = truncated(x2, t.t21, 2)?;
    let g12 = replicated_part(x1, x2, t.t12, delta)? / a1;
    let g21 = replicated_part(x2, x1, t.t21, delta)? / a2;
    Ok((a1 + a2) / (a1 * a2 * (1.0 + g12 + g21)))
}

/// Throughput with `t_1->2 = inf`, written through the effective service
/// time `E[X_2^ac]` of jobs started on server 2.
pub fn corollary_throughput(ds: &[ServiceDistribution], delta: f64, t21: f64) -> Result<f64, BoundError> {
    let (x1, x2) = check_pair(ds)?;
    check_delta(delta)?;
    if !(t21 >= 0.0) {
        return Err(BoundError::Invalid(format!("threshold {t21} must be >= 0")));
    }
    let trunc = x2.truncated_mean(t21)?;
    let effective = trunc + replicated_part(x2, x1, t21, delta)?;
    Ok(trunc / effective / x1.mean()? + 1.0 / effective)
}

/// Candidate thresholds per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGrid {
    pub t12: Vec<f64>,
    pub t21: Vec<f64>,
}

impl ThresholdGrid {
    /// 0, `inf`, the 5%..95% quantiles and all atoms of each server's law.
    pub fn for_laws(ds: &[ServiceDistribution]) -> Result<Self, BoundError> {
        let (x1, x2) = check_pair(ds)?;
        Ok(Self {
            t12: default_grid(x1),
            t21: default_grid(x2),
        })
    }

    /// Adds `n` log-spaced points between `lo` and `hi` to both coordinates.
    pub fn with_log_points(mut self, lo: f64, hi: f64, n: usize) -> Self {
        if n >= 2 && lo > 0.0 && hi > lo {
            let step = (hi / lo).ln() / (n - 1) as f64;
            for i in 0..n {
                let x = lo * (step * i as f64).exp();
                self.t12.push(x);
                self.t21.push(x);
            }
        }
        self
    }
}

const REFINE_TOL: f64 = 1e-4;
const MAX_REFINEMENTS: usize = 60;
const TIE: f64 = 1e-12;

/// Prefers the larger value; among ties, more `inf` entries, then larger
/// thresholds (less replication).
fn better(v: f64, t: (f64, f64), best: f64, bt: (f64, f64)) -> bool {
    if v > best * (1.0 + TIE) {
        return true;
    }
    if v < best * (1.0 - TIE) {
        return false;
    }
    let infs = |p: (f64, f64)| p.0.is_infinite() as u8 + p.1.is_infinite() as u8;
    let finite_sum = |p: (f64, f64)| {
        [p.0, p.1].iter().filter(|x| x.is_finite()).sum::<f64>()
    };
    (infs(t), finite_sum(t)) > (infs(bt), finite_sum(bt))
}

/// Points around `g` within its bracket `(lo, hi)`.
fn local_points(lo: f64, g: f64, hi: f64) -> Vec<f64> {
    if g.is_infinite() {
        return vec![g];
    }
    let hi = if hi.is_finite() { hi } else { 2.0 * g.max(lo) + 1.0 };
    let mut v = vec![g];
    for j in 1..4 {
        let f = j as f64 / 4.0;
        if g > lo {
            v.push(lo + (g - lo) * f);
        }
        v.push(g + (hi - g) * f);
    }
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn bracket(sorted: &[f64], g: f64) -> (f64, f64) {
    let lo = sorted.iter().rev().find(|&&x| x < g).copied().unwrap_or(g);
    let hi = sorted.iter().find(|&&x| x > g).copied().unwrap_or(g);
    (lo, hi)
}

/// Maximizes the pause throughput over `grid` (0 and `inf` are always
/// added), then refines around the incumbent until a round gains less than
/// `1e-4` relative.
pub fn optimize_pause_bound(
    ds: &[ServiceDistribution],
    delta: f64,
    grid: &ThresholdGrid,
) -> Result<BoundReport, BoundError> {
    check_pair(ds)?;
    let prep = |g: &[f64]| {
        let mut g = g.to_vec();
        g.extend([0.0, f64::INFINITY]);
        normalize_grid(g)
    };
    let g12 = prep(&grid.t12);
    let g21 = prep(&grid.t21);
    let mut evals = 0;
    let mut eval = |t12: f64, t21: f64| {
        evals += 1;
        adarep_pause_throughput(ds, delta, ThresholdPair { t12, t21 })
    };

    let mut best = f64::NEG_INFINITY;
    let mut bt = (f64::INFINITY, f64::INFINITY);
    for &a in &g12 {
        for &b in &g21 {
            let v = eval(a, b)?;
            if better(v, (a, b), best, bt) {
                best = v;
                bt = (a, b);
            }
        }
    }

    let (mut lo1, mut hi1) = bracket(&g12, bt.0);
    let (mut lo2, mut hi2) = bracket(&g21, bt.1);
    for _ in 0..MAX_REFINEMENTS {
        let c1 = local_points(lo1, bt.0, hi1);
        let c2 = local_points(lo2, bt.1, hi2);
        if c1.len() == 1 && c2.len() == 1 {
            break;
        }
        let before = best;
        for &a in &c1 {
            for &b in &c2 {
                let v = eval(a, b)?;
                if better(v, (a, b), best, bt) {
                    best = v;
                    bt = (a, b);
                }
            }
        }
        (lo1, hi1) = bracket(&c1, bt.0);
        (lo2, hi2) = bracket(&c2, bt.1);
        if best - before < REFINE_TOL * before.abs() {
            break;
        }
    }
    Ok(BoundReport {
        value: best,
        thresholds: vec![bt.0, bt.1],
        stderr: 0.0,
        evaluations: evals,
    })
}
