use thiserror::Error;

use crate::feeder::Phase;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read feeder file: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("phase error: {0}")]
    Phase(String),

    #[error("invalid impedance block: {0}")]
    Impedance(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("zero reactance on phase(s) {0:?}")]
    DivisionByZeroReactance(Vec<Phase>),

    #[error("zero {what} denominator on phase(s) {phases:?}")]
    DivisionByZero { what: &'static str, phases: Vec<Phase> },

    #[error("degenerate impedance block on line {0}")]
    DegenerateBlock(String),

    #[error("invalid configuration: {0}")]
    Configuration(String),

    #[error("gain structure violation: {0}")]
    Structure(String),

    #[error("singular matrix: {0}")]
    SingularMatrix(&'static str),

    #[error("eigenvalue solver did not converge")]
    NumericalFailure,

    #[error("no stabilizing gain: spectral radius {rho:.6} at the smallest probed gain {lo:e}")]
    NoStabilizingGain { lo: f64, rho: f64 },

    #[error("stable for every probed gain up to {hi:e}")]
    Unbounded { hi: f64 },

    #[error("no real power-flow solution (voltage collapse)")]
    NoRealSolution,

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("no good configuration found after {attempts} attempts")]
    NoGoodConfigurationFound { attempts: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Stable machine-readable code used by the CLI and HTTP service.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Parse(_) => "parse_error",
            Error::Topology(_) => "topology_error",
            Error::Phase(_) => "phase_error",
            Error::Impedance(_) => "impedance_error",
            Error::UnknownNode(_) => "unknown_node",
            Error::DivisionByZeroReactance(_) => "division_by_zero_reactance",
            Error::DivisionByZero { .. } => "division_by_zero",
            Error::DegenerateBlock(_) => "degenerate_block",
            Error::Configuration(_) => "configuration_error",
            Error::Structure(_) => "structure_error",
            Error::SingularMatrix(_) => "singular_matrix",
            Error::NumericalFailure => "numerical_failure",
            Error::NoStabilizingGain { .. } => "no_stabilizing_gain",
            Error::Unbounded { .. } => "unbounded",
            Error::NoRealSolution => "no_real_solution",
            Error::Scenario(_) => "scenario_error",
            Error::NoGoodConfigurationFound { .. } => "no_good_configuration_found",
            Error::InvalidArgument(_) => "invalid_argument",
        }
    }
}
