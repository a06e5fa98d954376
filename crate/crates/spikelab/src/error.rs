//! Error type shared by every module.

use std::path::PathBuf;
use thiserror::Error;

/// Which side of the quasi-equilibrium existence region was left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailedConstraint {
    /// The outer value at the cell edge would have to exceed `mu_max`.
    NucleationBound,
    /// The core slope would have to exceed the fold value `B_c`.
    ReplicationBound,
}

#[derive(Debug, Error)]
pub enum SpikeError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("argument {xi} outside the well-posed interval ({lo}, {hi}]")]
    Domain { xi: f64, lo: f64, hi: f64 },
    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("continuation step failure: {0}")]
    StepFailure(String),
    #[error("far field not linear: deviation {deviation:e} exceeds tolerance (increase y_max)")]
    TailNotLinear { deviation: f64 },
    #[error("slave (N-equation) operator is numerically singular; increase y_max")]
    SingularSlaveOperator,
    #[error("quadrature failed to reach tolerance (error estimate {error:e})")]
    QuadratureFailure { error: f64 },
    #[error("no quasi-equilibrium: {constraint:?} violated")]
    NoQuasiEquilibrium { constraint: FailedConstraint },
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
    #[error("root bracket failure: {0}")]
    BracketFailure(String),
    #[error("small-parameter prefactor B_c*sqrt(1-f) = {value} is not below 1")]
    PrefactorOutOfRange { value: f64 },
    #[error("time step underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("inner width resolved by only {cells:.2} cells at L = {length:.4}; use a finer grid")]
    ResolutionExceeded { cells: f64, length: f64 },
    #[error("maximum number of continuation points exceeded")]
    MaxPointsExceeded,
    #[error("eigensolver failure: {0}")]
    EigSolverFailure(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl SpikeError {
    /// Process exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            SpikeError::InvalidParameter(_) | SpikeError::Serde(_) => 2,
            SpikeError::RegimeMismatch(_) => 4,
            _ => 3,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            SpikeError::InvalidParameter(_) => "InvalidParameter",
            SpikeError::Domain { .. } => "DomainError",
            SpikeError::NewtonDiverged { .. } => "NewtonDiverged",
            SpikeError::NoSolution(_) => "NoSolution",
            SpikeError::StepFailure(_) => "StepFailure",
            SpikeError::TailNotLinear { .. } => "TailNotLinear",
            SpikeError::SingularSlaveOperator => "SingularSlaveOperator",
            SpikeError::QuadratureFailure { .. } => "QuadratureFailure",
            SpikeError::NoQuasiEquilibrium { .. } => "NoQuasiEquilibrium",
            SpikeError::RegimeMismatch(_) => "RegimeMismatch",
            SpikeError::BracketFailure(_) => "BracketFailure",
            SpikeError::PrefactorOutOfRange { .. } => "PrefactorOutOfRange",
            SpikeError::StepSizeUnderflow { .. } => "StepSizeUnderflow",
            SpikeError::ResolutionExceeded { .. } => "ResolutionExceeded",
            SpikeError::MaxPointsExceeded => "MaxPointsExceeded",
            SpikeError::EigSolverFailure(_) => "EigSolverFailure",
            SpikeError::Io { .. } => "Io",
            SpikeError::Serde(_) => "Serde",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpikeError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = SpikeError> = std::result::Result<T, E>;
