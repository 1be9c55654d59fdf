//! Closed-form throughput of upfront replication.
//!
//! An upfront policy splits the `K` servers into disjoint groups; every job
//! runs on all servers of one group and leaves with the fastest copy, after
//! which a group of two or more servers pays the cancellation delay `Δ`.
//! Each group is then a renewal process with rate `1 / (E[min] + Δ)`.

use std::fmt;

use thiserror::Error;

use crate::dist::{min_expectation, min_expectation_iid, DistError, ServiceDistribution, TailLaw};

/// Relative tolerance under which two throughputs or costs count as tied.
pub const TIE_TOL: f64 = 1e-9;

const MAX_PARTITION_SERVERS: usize = 12;
const MAX_PARTITIONS: u64 = 5_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("{k} servers have {count} set partitions; exhaustive search is capped at {MAX_PARTITIONS}")]
    TooManyServers { k: usize, count: u128 },
}

/// Disjoint nonempty groups of server indices covering `0..K`.
///
/// Indices are zero-based in code and one-based in text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(groups: Vec<Vec<usize>>, k: usize) -> Result<Self, AnalyticError> {
        let mut seen = vec![false; k];
        for g in &groups {
            if g.is_empty() {
                return Err(AnalyticError::InvalidPartition("empty group".into()));
            }
            for &s in g {
                if s >= k {
                    return Err(AnalyticError::InvalidPartition(format!(
                        "server {} out of range 1..={k}",
                        s + 1
                    )));
                }
                if seen[s] {
                    return Err(AnalyticError::InvalidPartition(format!(
                        "server {} appears twice",
                        s + 1
                    )));
                }
                seen[s] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&b| !b) {
            return Err(AnalyticError::InvalidPartition(format!(
                "server {} is not covered",
                missing + 1
            )));
        }
        let mut groups: Vec<Vec<usize>> = groups
            .into_iter()
            .map(|mut g| {
                g.sort_unstable();
                g
            })
            .collect();
        groups.sort();
        Ok(Self { groups })
    }

    /// Every server on its own.
    pub fn singletons(k: usize) -> Self {
        Self {
            groups: (0..k).map(|i| vec![i]).collect(),
        }
    }

    /// One group holding every server.
    pub fn full(k: usize) -> Self {
        Self {
            groups: vec![(0..k).collect()],
        }
    }

    /// Builds the partition encoded by a restricted-growth string.
    pub fn from_rgs(rgs: &[usize]) -> Self {
        let h = rgs.iter().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); h];
        for (i, &g) in rgs.iter().enumerate() {
            groups[g].push(i);
        }
        Self { groups }
    }

    /// Restricted-growth string: entry `i` is the group of server `i`, with
    /// groups numbered in order of first appearance.
    pub fn rgs(&self) -> Vec<usize> {
        let mut out = vec![0; self.servers()];
        for (j, g) in self.groups.iter().enumerate() {
            for &s in g {
                out[s] = j;
            }
        }
        out
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn servers(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Group index of every server.
    pub fn group_of(&self) -> Vec<usize> {
        self.rgs()
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (j, g) in self.groups.iter().enumerate() {
            if j > 0 {
                f.write_str(",")?;
            }
            f.write_str("[")?;
            for (i, s) in g.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{}", s + 1)?;
            }
            f.write_str("]")?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputReport {
    /// Jobs per unit time; the sum of `components`.
    pub value: f64,
    /// Rate of each group (or server).
    pub components: Vec<f64>,
    /// Policy and parameters that produced the value.
    pub label: String,
}

impl ThroughputReport {
    fn from_components(components: Vec<f64>, label: String) -> Self {
        Self {
            value: components.iter().sum(),
            components,
            label,
        }
    }
}

fn group_rate(ds: &[ServiceDistribution], group: &[usize], delta: f64) -> Result<f64, AnalyticError> {
    let laws: Vec<&dyn TailLaw> = group.iter().map(|&i| &ds[i] as &dyn TailLaw).collect();
    let m = if group.len() == 1 {
        ds[group[0]].mean()?
    } else {
        min_expectation(&laws)? + delta
    };
    Ok(1.0 / m)
}

/// `Σ 1 / E[X_i]`: every server works alone.
pub fn throughput_norep(ds: &[ServiceDistribution]) -> Result<ThroughputReport, AnalyticError> {
    let components = ds
        .iter()
        .map(|d| d.mean().map(|m| 1.0 / m))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ThroughputReport::from_components(components, "norep".into()))
}

/// `1 / (Δ + E[min X_i])`: every job runs on all servers.
pub fn throughput_fullrep(ds: &[ServiceDistribution], delta: f64) -> Result<ThroughputReport, AnalyticError> {
    let all: Vec<usize> = (0..ds.len()).collect();
    let r = group_rate(ds, &all, delta)?;
    Ok(ThroughputReport::from_components(vec![r], "fullrep".into()))
}

/// `Σ_j 1 / (E[min over group j] + Δ)`.
pub fn throughput_upfront(
    p: &Partition,
    ds: &[ServiceDistribution],
    delta: f64,
) -> Result<ThroughputReport, AnalyticError> {
    if p.servers() != ds.len() {
        return Err(AnalyticError::InvalidPartition(format!(
            "partition covers {} servers but the system has {}",
            p.servers(),
            ds.len()
        )));
    }
    let components = p
        .groups()
        .iter()
        .map(|g| group_rate(ds, g, delta))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ThroughputReport::from_components(components, format!("upfront:{p}")))
}

/// Bell numbers `B_0..=B_n` by `B_{k+1} = Σ_i C(k, i) B_i`.
pub fn bell_numbers(n: usize) -> Vec<u128> {
    let mut bell = vec![1u128];
    let mut row = vec![1u128]; // binomial row C(k, .)
    for k in 0..n {
        let next: u128 = row.iter().zip(&bell).map(|(c, b)| c * b).sum();
        bell.push(next);
        let mut new_row = vec![1u128; k + 2];
        for i in 1..=k {
            new_row[i] = row[i - 1] + row[i];
        }
        row = new_row;
    }
    bell
}

/// All set partitions of `0..k` in lexicographic restricted-growth order.
pub fn partitions(k: usize) -> Partitions {
    Partitions {
        rgs: vec![0; k],
        maxes: vec![0; k],
        done: false,
    }
}

pub struct Partitions {
    rgs: Vec<usize>,
    // maxes[i] = max(rgs[..i]), with maxes[0] = 0
    maxes: Vec<usize>,
    done: bool,
}

impl Partitions {
    fn current(&self) -> Option<&[usize]> {
        (!self.done).then_some(&self.rgs)
    }

    fn advance(&mut self) {
        let k = self.rgs.len();
        let mut i = k;
        while i > 1 {
            i -= 1;
            if self.rgs[i] <= self.maxes[i] {
                self.rgs[i] += 1;
                for j in i + 1..k {
                    self.rgs[j] = 0;
                    self.maxes[j] = self.maxes[j - 1].max(self.rgs[j - 1]);
                }
                return;
            }
        }
        self.done = true;
    }
}

impl Iterator for Partitions {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        let p = Partition::from_rgs(self.current()?);
        self.advance();
        Some(p)
    }
}

/// Exhaustive search for the best upfront partition.
///
/// Ties (within [`TIE_TOL`]) go to fewer groups, then to the
/// lexicographically smallest restricted-growth string.
pub fn best_partition(
    ds: &[ServiceDistribution],
    delta: f64,
) -> Result<(Partition, ThroughputReport), AnalyticError> {
    let k = ds.len();
    let count = *bell_numbers(k).last().unwrap();
    if k > MAX_PARTITION_SERVERS || count > MAX_PARTITIONS as u128 {
        return Err(AnalyticError::TooManyServers { k, count });
    }
    // rate of every subset, indexed by bitmask
    let mut rate = vec![0.0; 1 << k];
    for mask in 1usize..(1 << k) {
        let group: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
        rate[mask] = group_rate(ds, &group, delta)?;
    }
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    let mut it = partitions(k);
    let mut masks = Vec::with_capacity(k);
    while let Some(rgs) = it.current() {
        masks.clear();
        masks.resize(rgs.iter().max().map_or(0, |m| m + 1), 0usize);
        for (i, &g) in rgs.iter().enumerate() {
            masks[g] |= 1 << i;
        }
        let value: f64 = masks.iter().map(|&m| rate[m]).sum();
        let h = masks.len();
        let better = match &best {
            None => true,
            Some((bv, bh, _)) => {
                if value > bv * (1.0 + TIE_TOL) {
                    true
                } else if value >= bv * (1.0 - TIE_TOL) {
                    // rgs are visited in lexicographic order, so only a
                    // strictly smaller group count can win a tie
                    h < *bh
                } else {
                    false
                }
            }
        };
        if better {
            best = Some((value, h, rgs.to_vec()));
        }
        it.advance();
    }
    let (_, _, rgs) = best.expect("at least one partition");
    let p = Partition::from_rgs(&rgs);
    let report = throughput_upfront(&p, ds, delta)?;
    Ok((p, report))
}

/// Outcome of the homogeneous group-size optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousR {
    /// Group size minimizing `r (E[X_{1:r}] + Δ)`.
    pub r: usize,
    /// `K / (r (E[X_{1:r}] + Δ))` at the optimum.
    pub bound: f64,
    /// Whether `r` divides `K`, the condition for the bound to be attained.
    pub divides: bool,
    /// `r (E[X_{1:r}] + Δ)` for `r = 1..=K`; infinite where the mean is.
    pub costs: Vec<f64>,
}

/// Best replication factor for `K` servers with identical law `d`.
///
/// A single copy pays no cancellation delay. Ties go to the smallest `r`.
pub fn best_homogeneous_r(d: &ServiceDistribution, delta: f64, k: usize) -> Result<HomogeneousR, AnalyticError> {
    if k == 0 {
        return Err(AnalyticError::InvalidPartition("no servers".into()));
    }
    let mut costs = Vec::with_capacity(k);
    for r in 1..=k {
        let c = match min_expectation_iid(d, r) {
            Ok(m) => r as f64 * (m + if r >= 2 { delta } else { 0.0 }),
            Err(DistError::InfiniteMean) => f64::INFINITY,
            Err(e) => return Err(e.into()),
        };
        costs.push(c);
    }
    let mut best = 0;
    for r in 1..k {
        if costs[r] < costs[best] * (1.0 - TIE_TOL) {
            best = r;
        }
    }
    if !costs[best].is_finite() {
        return Err(DistError::InfiniteMean.into());
    }
    let r = best + 1;
    Ok(HomogeneousR {
        r,
        bound: k as f64 / costs[best],
        divides: k % r == 0,
        costs,
    })
}
