use crate::dist::{DistError, ServiceDistribution};

/// The servers' service-time laws and the cancellation delay `Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub servers: Vec<ServiceDistribution>,
    pub delta: f64,
}

impl SystemConfig {
    pub fn new(servers: Vec<ServiceDistribution>, delta: f64) -> Result<Self, DistError> {
        if servers.is_empty() {
            return Err(DistError::Invalid("a system needs at least one server".into()));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(DistError::Invalid(format!("cancellation delay {delta} must be finite and >= 0")));
        }
        Ok(Self { servers, delta })
    }

    /// `K` copies of the same law.
    pub fn homogeneous(d: ServiceDistribution, k: usize, delta: f64) -> Result<Self, DistError> {
        Self::new(vec![d; k], delta)
    }

    pub fn k(&self) -> usize {
        self.servers.len()
    }
}
