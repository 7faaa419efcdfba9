//! Small-signal stability analysis of voltage controllers on unbalanced
//! three-phase distribution feeders.

pub mod control;
pub mod error;
pub mod feeder;
pub mod fixtures;
pub mod ieee;
pub mod metrics;
pub mod placement;
pub mod sim;
pub mod stability;

pub use control::{build_system, ClosedLoopSystem, Configuration, ControlKind, GainMatrix, GainSet};
pub use error::{Error, Result};
pub use feeder::{build_sensitivity, Feeder, Phase, PhaseSet, SensitivityMatrices};
