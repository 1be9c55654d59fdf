//! Throughput analysis of multi-server systems with job replication.
//!
//! * [`dist`]: service-time laws, truncated and residual means, minima.
//! * [`analytic`]: closed-form throughput of upfront replication schemes.
//! * [`bounds`]: pause-and-replicate and start-time capacity bounds.
//! * [`engine`]: seeded discrete-event simulator (saturated and Poisson).
//! * [`policies`]: NoRep, FullRep, Upfront, MaxRate, AdaRep and tabular rules.
//! * [`mdp`]: the replication MDP for atomic laws and its average-cost solver.

mod grammar;

pub mod analytic;
pub mod bounds;
pub mod dist;
pub mod engine;
pub mod mdp;
pub mod policies;
mod system;

pub use dist::{DistError, ResidualDistribution, ServiceDistribution};
pub use grammar::Bindings;
pub use system::SystemConfig;
