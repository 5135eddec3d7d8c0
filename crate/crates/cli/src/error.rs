use ratetip::asymptotics::SeriesError;
use ratetip::equilibria::EquilibriumError;
use ratetip::integrate::{IntegrateError, PullbackError};
use ratetip::model::ModelError;
use ratetip::tipping::TippingError;
use thiserror::Error;

/// Failures with their exit codes: usage 1, math precondition 2,
/// convergence 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Math(String),
    #[error("{0}")]
    Convergence(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Math(_) => 2,
            CliError::Convergence(_) => 3,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::OutOfDomain { .. } => CliError::Math(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EquilibriumError> for CliError {
    fn from(e: EquilibriumError) -> Self {
        CliError::Math(e.to_string())
    }
}

impl From<IntegrateError> for CliError {
    fn from(e: IntegrateError) -> Self {
        match e {
            IntegrateError::ToleranceFailure { .. } => CliError::Convergence(e.to_string()),
            IntegrateError::InvalidInput(m) => CliError::Usage(m),
        }
    }
}

impl From<PullbackError> for CliError {
    fn from(e: PullbackError) -> Self {
        match e {
            PullbackError::Integrate(inner) => inner.into(),
            PullbackError::InvalidInput(m) => CliError::Usage(m),
            PullbackError::NoConvergence { .. } | PullbackError::Escape { .. } => CliError::Convergence(e.to_string()),
        }
    }
}

impl From<SeriesError> for CliError {
    fn from(e: SeriesError) -> Self {
        match e {
            SeriesError::OrderTooHigh { .. } | SeriesError::InvalidInput(_) => CliError::Usage(e.to_string()),
            SeriesError::MarginLoss { .. } => CliError::Math(e.to_string()),
            SeriesError::Model(m) => m.into(),
            SeriesError::Pullback(p) => p.into(),
        }
    }
}

impl From<TippingError> for CliError {
    fn from(e: TippingError) -> Self {
        match e {
            TippingError::Precondition(_) => CliError::Usage(e.to_string()),
            TippingError::NoBranchPair | TippingError::NotTracking { .. } => CliError::Math(e.to_string()),
            TippingError::Equilibrium(x) => x.into(),
            TippingError::Series(x) => x.into(),
            TippingError::Integrate(x) => x.into(),
            TippingError::Pullback(x) => x.into(),
        }
    }
}
