//! Start-time bound for `K` identical servers.
//!
//! A job's original copy starts at 0 and replica `k` at `t_k`, with
//! `t_2 <= .. <= t_K`. The job leaves at `S = min(X_1, X_k + t_k)` and costs
//!
//! ```text
//! E[C] = Σ_k E[(S - t_k)+] + Δ (Σ_{k>=2} P(S > t_k) + P(S > t_2))
//! ```
//!
//! No work-conserving rule can beat `K / min_t E[C]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{default_grid, normalize_grid, BoundError, BoundReport};
use crate::dist::{integrate_tail, Decay, DistError, ServiceDistribution, TailLaw};

/// Replica launch times relative to the original copy; `inf` means never.
#[derive(Debug, Clone, PartialEq)]
pub struct StartTimeVector(Vec<f64>);

impl StartTimeVector {
    pub fn new(t: Vec<f64>) -> Result<Self, BoundError> {
        if t.iter().any(|x| !(*x >= 0.0)) {
            return Err(BoundError::Invalid(format!("start times must be >= 0: {t:?}")));
        }
        if t.windows(2).any(|w| w[0] > w[1]) {
            return Err(BoundError::Invalid(format!("start times must be nondecreasing: {t:?}")));
        }
        Ok(Self(t))
    }

    /// `t_2 = .. = t_r = 0`, the rest never: upfront replication on `r` servers.
    pub fn upfront(r: usize, k: usize) -> Self {
        Self((2..=k).map(|i| if i <= r { 0.0 } else { f64::INFINITY }).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn servers(&self) -> usize {
        self.0.len() + 1
    }
}

/// How cancellation windows enter the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeltaCharge {
    /// One window per launched replica plus one for the original copy once
    /// any replica has launched.
    #[default]
    AsPrinted,
    /// One window per launched replica only.
    ReplicasOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Quadrature of `P(S > s)`; exact sums for atomic laws.
    Exact,
    /// Sample mean over `paths` draws of `(X_1, .., X_K)`. The same draws
    /// serve every candidate vector.
    MonteCarlo { paths: usize, seed: u64 },
}

pub const MIN_PATHS: usize = 10_000;
const PATH_BATCH: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// `P(S > s) = Π_k P(X > s - t_k)` over the launched copies.
struct StartLaw<'a> {
    d: &'a ServiceDistribution,
    starts: Vec<f64>,
}

impl TailLaw for StartLaw<'_> {
    fn tail(&self, s: f64) -> f64 {
        let mut p = 1.0;
        for &t in &self.starts {
            p *= self.d.tail(s - t);
            if p == 0.0 {
                break;
            }
        }
        p
    }

    fn kinks(&self, out: &mut Vec<f64>) {
        let mut own = Vec::new();
        self.d.kinks(&mut own);
        for &t in &self.starts {
            out.push(t);
            out.extend(own.iter().map(|k| k + t));
        }
    }

    fn decay(&self) -> Decay {
        match self.d.decay() {
            Decay::Bounded(u) => Decay::Bounded(u + self.starts[0]),
            Decay::Light => Decay::Light,
            Decay::Power(a) => Decay::Power(a * self.starts.len() as f64),
        }
    }

    fn scale(&self) -> f64 {
        self.d.scale() + self.starts.last().copied().unwrap_or(0.0)
    }

    fn is_step(&self) -> bool {
        self.d.is_step()
    }

    fn exp_rate(&self) -> Option<f64> {
        let rate = self.d.exp_rate()?;
        self.starts
            .iter()
            .all(|&t| t == 0.0)
            .then(|| rate * self.starts.len() as f64)
    }
}

fn check(delta: f64) -> Result<(), BoundError> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(BoundError::Invalid(format!("cancellation delay {delta} must be finite and >= 0")));
    }
    Ok(())
}

fn exact_cost(d: &ServiceDistribution, delta: f64, t: &[f64], charge: DeltaCharge) -> Result<f64, BoundError> {
    let mut starts = vec![0.0];
    starts.extend(t.iter().copied().filter(|x| x.is_finite()));
    if starts.len() == 1 {
        return Ok(d.mean()?);
    }
    let law = StartLaw { d, starts };
    let mut total = 0.0;
    let mut last: Option<(f64, f64)> = None;
    for &tk in &law.starts {
        let v = match last {
            Some((prev, v)) if prev == tk => v,
            _ => integrate_tail(&law, tk)?,
        };
        last = Some((tk, v));
        total += v;
    }
    if delta > 0.0 {
        let mut windows: f64 = law.starts[1..].iter().map(|&tk| law.tail(tk)).sum();
        if charge == DeltaCharge::AsPrinted {
            windows += law.tail(law.starts[1]);
        }
        total += delta * windows;
    }
    Ok(total)
}

/// Common random numbers: `paths × K` service draws, reused for every
/// candidate vector.
struct Draws {
    k: usize,
    x: Vec<f64>,
}

impl Draws {
    fn new(d: &ServiceDistribution, k: usize, paths: usize, seed: u64) -> Self {
        let batches = paths.div_ceil(PATH_BATCH);
        let chunks: Vec<Vec<f64>> = (0..batches)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                let n = PATH_BATCH.min(paths - b * PATH_BATCH);
                (0..n * k).map(|_| d.sample(&mut rng)).collect()
            })
            .collect();
        Self {
            k,
            x: chunks.concat(),
        }
    }

    fn cost(&self, delta: f64, t: &[f64], charge: DeltaCharge) -> CostEstimate {
        let starts: Vec<f64> = std::iter::once(0.0).chain(t.iter().copied()).collect();
        let per_path: Vec<f64> = self
            .x
            .par_chunks(self.k)
            .map(|xs| {
                let s = xs
                    .iter()
                    .zip(&starts)
                    .map(|(x, t)| x + t)
                    .fold(f64::INFINITY, f64::min);
                let mut c: f64 = starts.iter().map(|&tk| (s - tk).max(0.0)).sum();
                if delta > 0.0 {
                    let mut n = starts[1..].iter().filter(|&&tk| tk < s).count();
                    if charge == DeltaCharge::AsPrinted && starts.len() > 1 && starts[1] < s {
                        n += 1;
                    }
                    c += delta * n as f64;
                }
                c
            })
            .collect();
        let (mean, stderr) = crate::engine::stats::mean_and_stderr(&per_path);
        CostEstimate { mean, stderr }
    }
}

fn start_law_mean_exists(d: &ServiceDistribution, t: &[f64]) -> Result<(), BoundError> {
    if let Decay::Power(a) = d.decay() {
        let launched = 1 + t.iter().filter(|x| x.is_finite()).count();
        if a * launched as f64 <= 1.0 {
            return Err(DistError::InfiniteMean.into());
        }
    }
    Ok(())
}

/// Expected computing time of one job whose replicas start at `t`.
pub fn homogeneous_cost(
    d: &ServiceDistribution,
    delta: f64,
    t: &StartTimeVector,
    estimator: Estimator,
    charge: DeltaCharge,
) -> Result<CostEstimate, BoundError> {
    start_law_mean_exists(d, t.times())?;
    check(delta)?;
    match estimator {
        Estimator::Exact => Ok(CostEstimate {
            mean: exact_cost(d, delta, t.times(), charge)?,
            stderr: 0.0,
        }),
        Estimator::MonteCarlo { paths, seed } => {
            if paths < MIN_PATHS {
                return Err(BoundError::Invalid(format!("at least {MIN_PATHS} paths are needed, got {paths}")));
            }
            Ok(Draws::new(d, t.servers(), paths, seed).cost(delta, t.times(), charge))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerConfig {
    pub estimator: Estimator,
    pub charge: DeltaCharge,
    /// Log-spaced grid points added between 1% and 100 times the mean.
    pub log_points: usize,
    pub max_sweeps: usize,
    /// A sweep improving the cost by less than this (relative) stops descent.
    pub tol: f64,
}

impl Default for MinimizerConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::Exact,
            charge: DeltaCharge::AsPrinted,
            log_points: 12,
            max_sweeps: 50,
            tol: 1e-5,
        }
    }
}

/// `K / min_t E[C]` by coordinate descent over a grid, started from every
/// upfront corner. Ties keep the earlier candidate, so fewer replicas win.
pub fn homogeneous_bound(
    d: &ServiceDistribution,
    delta: f64,
    k: usize,
    config: &MinimizerConfig,
) -> Result<BoundReport, BoundError> {
    if k == 0 {
        return Err(BoundError::Invalid("at least one server is needed".into()));
    }
    check(delta)?;
    let mut grid = default_grid(d);
    let mean = d.mean().unwrap_or_else(|_| d.scale());
    if config.log_points >= 2 {
        let (lo, hi) = (0.01 * mean, 100.0 * mean);
        let step = (hi / lo).ln() / (config.log_points - 1) as f64;
        grid.extend((0..config.log_points).map(|i| lo * (step * i as f64).exp()));
    }
    let grid = normalize_grid(grid);

    let draws = match config.estimator {
        Estimator::MonteCarlo { paths, seed } => {
            if paths < MIN_PATHS {
                return Err(BoundError::Invalid(format!("at least {MIN_PATHS} paths are needed, got {paths}")));
            }
            Some(Draws::new(d, k, paths, seed))
        }
        Estimator::Exact => None,
    };
    let mut evals = 0;
    let mut cost = |t: &[f64]| -> Result<CostEstimate, BoundError> {
        evals += 1;
        start_law_mean_exists(d, t)?;
        match &draws {
            Some(dr) => Ok(dr.cost(delta, t, config.charge)),
            None => Ok(CostEstimate {
                mean: exact_cost(d, delta, t, config.charge)?,
                stderr: 0.0,
            }),
        }
    };

    let mut best: Option<(Vec<f64>, CostEstimate)> = None;
    let improves = |c: f64, incumbent: f64| c < incumbent * (1.0 - 1e-12);
    for r in 1..=k {
        let mut t = StartTimeVector::upfront(r, k).0;
        let mut cur = match cost(&t) {
            Ok(c) => c,
            // a corner with too few copies can have an infinite mean
            Err(BoundError::Dist(DistError::InfiniteMean)) => continue,
            Err(e) => return Err(e),
        };
        for _ in 0..config.max_sweeps {
            let before = cur.mean;
            for i in 0..t.len() {
                let lo = if i == 0 { 0.0 } else { t[i - 1] };
                let hi = t.get(i + 1).copied().unwrap_or(f64::INFINITY);
                for &g in grid.iter().filter(|&&g| g >= lo && g <= hi) {
                    if g == t[i] {
                        continue;
                    }
                    let mut cand = t.clone();
                    cand[i] = g;
                    let c = match cost(&cand) {
                        Ok(c) => c,
                        Err(BoundError::Dist(DistError::InfiniteMean)) => continue,
                        Err(e) => return Err(e),
                    };
                    if improves(c.mean, cur.mean) {
                        cur = c;
                        t = cand;
                    }
                }
            }
            if before - cur.mean <= config.tol * before {
                break;
            }
        }
        if best.as_ref().is_none_or(|(_, b)| improves(cur.mean, b.mean)) {
            best = Some((t, cur));
        }
    }
    let (t, c) = best.ok_or(BoundError::Dist(DistError::InfiniteMean))?;
    Ok(BoundReport {
        value: k as f64 / c.mean,
        thresholds: t,
        // delta method: sd(K/C) ≈ K sd(C) / C²
        stderr: k as f64 * c.stderr / (c.mean * c.mean),
        evaluations: evals,
    })
}
