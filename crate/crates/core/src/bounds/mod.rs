//! Upper bounds on the service capacity.
//!
//! [`pause`] holds the two-server bound obtained by letting a scheduler pause
//! a running job to host a replica, and [`homogeneous`] the start-time bound
//! for `K` identical servers, which minimizes the expected computing time of
//! one job over the launch times of its replicas.

pub mod homogeneous;
pub mod pause;

use std::fmt;

use thiserror::Error;

use crate::dist::DistError;

pub use homogeneous::{
    homogeneous_bound, homogeneous_cost, CostEstimate, DeltaCharge, Estimator, MinimizerConfig, StartTimeVector,
    MIN_PATHS,
};
pub use pause::{
    adarep_pause_throughput, corollary_throughput, optimize_pause_bound, ThresholdGrid, ThresholdPair,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("threshold {threshold} on server {server} leaves a zero truncated mean")]
    DegenerateTruncation { server: usize, threshold: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// A capacity bound together with the thresholds or start times attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    /// Jobs per unit time.
    pub value: f64,
    /// `[t_1->2, t_2->1]` for the pause bound, `[t_2, .., t_K]` for the
    /// start-time bound. `inf` means "never".
    pub thresholds: Vec<f64>,
    /// Zero for exact evaluation.
    pub stderr: f64,
    /// Objective evaluations spent by the optimizer.
    pub evaluations: usize,
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} at [", self.value)?;
        for (i, t) in self.thresholds.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{t}")?;
        }
        f.write_str("]")
    }
}

/// Candidate thresholds for one law: 0, the 5%..95% quantiles, every atom,
/// and `inf`, sorted and deduplicated.
pub(crate) fn default_grid(d: &crate::dist::ServiceDistribution) -> Vec<f64> {
    let mut g = vec![0.0, f64::INFINITY];
    for i in 1..20 {
        let q = d.quantile(i as f64 * 0.05);
        if q.is_finite() {
            g.push(q);
        }
    }
    if let Some(atoms) = d.atoms() {
        g.extend(atoms.iter().map(|a| a.value));
    }
    normalize_grid(g)
}

pub(crate) fn normalize_grid(mut g: Vec<f64>) -> Vec<f64> {
    g.retain(|x| *x >= 0.0);
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| a == b || (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    g
}
