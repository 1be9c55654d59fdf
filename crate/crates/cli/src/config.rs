//! Experiment files: a TOML tree whose string leaves use the distribution and
//! policy literal grammars of the core crate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use replicap::mdp::TabularPolicy;
use replicap::policies::{parse_policy, PolicyInstance};
use replicap::{Bindings, ServiceDistribution, SystemConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// One literal per server, or a single literal repeated `k` times.
    pub servers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub policies: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub sweep: BTreeMap<String, Axis>,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub bound: BoundSection,
    #[serde(default)]
    pub mdp: MdpSection,
}

/// Values of one sweep variable, bound to `$name` inside literals.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Axis {
    List(Vec<f64>),
    Range { from: f64, to: f64, steps: usize },
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            Axis::List(ref v) => v.clone(),
            Axis::Range { from, to, steps } => match steps {
                0 => vec![],
                1 => vec![from],
                // 12 significant digits keep `0.15` from printing as `0.15000000000000002`
                n => (0..n)
                    .map(|i| from + (to - from) * i as f64 / (n - 1) as f64)
                    .map(|x| format!("{x:.11e}").parse().unwrap_or(x))
                    .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Saturated,
    Poisson,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    /// Pause bound for two distinct laws, start-time bound for identical ones.
    #[default]
    Auto,
    Pause,
    Homogeneous,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    #[default]
    Exact,
    Mc,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ChargeKind {
    #[default]
    AsPrinted,
    ReplicasOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    #[serde(default)]
    pub kind: BoundKind,
    #[serde(default)]
    pub estimator: EstimatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(default)]
    pub charge: ChargeKind,
    /// Log-spaced points added to the threshold grid.
    #[serde(default = "default_log_points")]
    pub grid: usize,
}

fn default_log_points() -> usize {
    12
}

impl Default for BoundSection {
    fn default() -> Self {
        Self {
            kind: BoundKind::Auto,
            estimator: EstimatorKind::Exact,
            paths: None,
            charge: ChargeKind::AsPrinted,
            grid: default_log_points(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MdpSection {
    #[serde(default = "default_cap")]
    pub state_cap: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
}

fn default_cap() -> usize {
    replicap::mdp::DEFAULT_STATE_CAP
}

fn default_tol() -> f64 {
    1e-9
}

fn default_iters() -> usize {
    1_000_000
}

impl Default for MdpSection {
    fn default() -> Self {
        Self {
            state_cap: default_cap(),
            tol: default_tol(),
            max_iters: default_iters(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub jobs: Option<usize>,
    pub paths: Option<usize>,
    pub estimator: Option<EstimatorKind>,
    pub grid: Option<usize>,
    pub charge: Option<ChargeKind>,
}

/// A loaded config plus the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub base: PathBuf,
}

/// One point of the sweep grid.
#[derive(Debug, Clone)]
pub struct Point {
    pub bindings: Bindings,
    pub system: SystemConfig,
    pub policies: Vec<PolicyInstance>,
}

impl Experiment {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.apply(overrides);
        config.check()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base })
    }

    /// Sweep axes in column order.
    pub fn axes(&self) -> Vec<String> {
        self.config.sweep.keys().cloned().collect()
    }

    /// Cartesian product of the axes, last axis fastest.
    pub fn points(&self) -> Result<Vec<Point>, CliError> {
        let mut grid = vec![Bindings::new()];
        for (name, axis) in &self.config.sweep {
            let values = axis.values();
            if values.is_empty() {
                return Err(CliError::Config(format!("sweep axis `{name}` is empty")));
            }
            grid = grid
                .into_iter()
                .flat_map(|b| {
                    values.iter().map(move |&v| {
                        let mut b = b.clone();
                        b.insert(name.clone(), v);
                        b
                    })
                })
                .collect();
        }
        grid.into_iter().map(|b| self.point(b)).collect()
    }

    fn point(&self, bindings: Bindings) -> Result<Point, CliError> {
        let c = &self.config;
        let mut laws = c
            .servers
            .iter()
            .map(|s| replicap::dist::parse_distribution(s, &bindings))
            .collect::<Result<Vec<ServiceDistribution>, _>>()
            .map_err(|e| CliError::Config(format!("{e}{}", at(&bindings))))?;
        if let Some(k) = c.k {
            laws = vec![laws[0].clone(); k];
        }
        let system = SystemConfig::new(laws, c.delta).map_err(|e| CliError::Config(e.to_string()))?;
        let policies = c
            .policies
            .iter()
            .map(|s| self.policy(s, &bindings, &system))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Point {
            bindings,
            system,
            policies,
        })
    }

    fn policy(&self, src: &str, bindings: &Bindings, system: &SystemConfig) -> Result<PolicyInstance, CliError> {
        let p = match src.strip_prefix("table:") {
            Some(file) => {
                let path = self.base.join(file.trim());
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                let t = TabularPolicy::from_csv(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                PolicyInstance::Tabular(Arc::new(t))
            }
            None => parse_policy(src, bindings).map_err(|e| CliError::Config(format!("{e}{}", at(bindings))))?,
        };
        p.validate(system.k()).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(p)
    }

    pub fn seed(&self) -> u64 {
        self.config.seed.unwrap_or_default()
    }

    /// Hex SHA-256 of the effective config (file plus overrides), truncated
    /// to 16 characters.
    pub fn digest(&self) -> String {
        let canonical = toml::to_string(&self.config).expect("config serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn at(bindings: &Bindings) -> String {
    if bindings.is_empty() {
        return String::new();
    }
    let parts: Vec<String> = bindings.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!(" (at {})", parts.join(", "))
}

impl ExperimentConfig {
    fn apply(&mut self, o: &Overrides) {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.runs.is_some() {
            self.simulate.runs = o.runs;
        }
        if o.jobs.is_some() {
            self.simulate.jobs = o.jobs;
        }
        if o.paths.is_some() {
            self.bound.paths = o.paths;
        }
        if let Some(e) = o.estimator {
            self.bound.estimator = e;
        }
        if let Some(g) = o.grid {
            self.bound.grid = g;
        }
        if let Some(c) = o.charge {
            self.bound.charge = c;
        }
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.servers.is_empty() {
            return bad("`servers` must list at least one distribution");
        }
        if self.seed.is_none() {
            return bad("a seed is required (`seed = N` or --seed N)");
        }
        match self.k {
            Some(0) => return bad("`k` must be at least 1"),
            Some(_) if self.servers.len() != 1 => return bad("`k` repeats a single server literal"),
            _ => {}
        }
        if self.simulate.jobs == Some(0) {
            return bad("`jobs` must be at least 1");
        }
        if self.simulate.runs == Some(0) {
            return bad("`runs` must be at least 1");
        }
        if self.simulate.lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("every arrival rate must be positive and finite");
        }
        if self.sweep.keys().any(|k| k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')) {
            return bad("sweep axis names must be alphanumeric");
        }
        Ok(())
    }
}
