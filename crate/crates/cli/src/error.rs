use std::process::ExitCode;

use replicap::analytic::AnalyticError;
use replicap::bounds::BoundError;
use replicap::engine::EngineError;
use replicap::mdp::MdpError;
use replicap::policies::PolicyError;
use replicap::DistError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Numeric(_) => ExitCode::from(3),
            CliError::Io(_) => ExitCode::from(1),
        }
    }
}

/// Whether a core error stems from the input (exit 2) or from the numbers
/// it produced (exit 3).
pub trait Classify: std::fmt::Display {
    fn is_numeric(&self) -> bool;

    fn into_cli(self) -> CliError
    where
        Self: Sized,
    {
        if self.is_numeric() {
            CliError::Numeric(self.to_string())
        } else {
            CliError::Config(self.to_string())
        }
    }
}

impl Classify for DistError {
    fn is_numeric(&self) -> bool {
        matches!(self, DistError::InfiniteMean | DistError::ZeroSupport { .. })
    }
}

impl Classify for PolicyError {
    fn is_numeric(&self) -> bool {
        match self {
            PolicyError::Dist(d) => d.is_numeric(),
            PolicyError::InconsistentObservation(_) => true,
            PolicyError::Parse(_) | PolicyError::Mismatch { .. } => false,
        }
    }
}

impl Classify for AnalyticError {
    fn is_numeric(&self) -> bool {
        match self {
            AnalyticError::Dist(d) => d.is_numeric(),
            _ => false,
        }
    }
}

impl Classify for BoundError {
    fn is_numeric(&self) -> bool {
        match self {
            BoundError::Dist(d) => d.is_numeric(),
            BoundError::DegenerateTruncation { .. } => true,
            BoundError::Invalid(_) => false,
        }
    }
}

impl Classify for EngineError {
    fn is_numeric(&self) -> bool {
        match self {
            EngineError::Policy(p) => p.is_numeric(),
            EngineError::Dist(d) => d.is_numeric(),
            EngineError::Invalid(_) => false,
        }
    }
}

impl Classify for MdpError {
    fn is_numeric(&self) -> bool {
        match self {
            MdpError::NoConvergence { .. } | MdpError::MultichainDetected { .. } => true,
            MdpError::Policy(p) => p.is_numeric(),
            _ => false,
        }
    }
}
