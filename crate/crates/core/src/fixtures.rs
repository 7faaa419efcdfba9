//! Two-bus feeders (slack bus + one PQ bus) used by the analytic families.
//!
//! The sensitivity entries carry a factor of two over the line impedance,
//! so the `*_b` constructors take the desired B-matrix entry and build the
//! line with half of it.

use num_complex::Complex64;

use crate::control::Configuration;
use crate::feeder::{build_sensitivity, Feeder, ImpedanceBlock, Line, LineImpedance, Node, PhaseSet, SensitivityMatrices};
use crate::metrics::{make_phase_ratio_line, make_rx_line};

pub const SLACK: &str = "slack";
pub const PQ: &str = "pq";

/// Declared base of the two-bus fixtures. At 0.5 MVA the (250 kW, 50 kVAR)
/// load is (0.5, 0.1) p.u.
pub const TWO_BUS_BASE_MVA: f64 = 0.5;
pub const TWO_BUS_BASE_KV: f64 = 4.16;

pub fn two_bus(line: LineImpedance) -> Feeder {
    let phases = line.phases();
    let nodes = vec![
        Node { id: SLACK.into(), phases: PhaseSet::ABC },
        Node { id: PQ.into(), phases },
    ];
    Feeder::new(TWO_BUS_BASE_KV, TWO_BUS_BASE_MVA, SLACK, nodes, vec![Line { from: SLACK.into(), to: PQ.into(), z: line }])
        .expect("two-bus fixture is a valid tree")
}

/// Single-phase two-bus feeder whose sensitivity entries are `(b_x, b_r)`.
pub fn two_bus_1ph_feeder(b_x: f64, b_r: f64) -> Feeder {
    two_bus(LineImpedance::diagonal(b_r / 2.0, b_x / 2.0, PhaseSet::A).expect("positive reactance"))
}

/// Three-phase two-bus feeder whose sensitivity block equals `b`.
pub fn two_bus_3ph_feeder(b: &ImpedanceBlock) -> Feeder {
    two_bus(LineImpedance::from_block(b * Complex64::new(0.5, 0.0)).expect("valid impedance block"))
}

pub fn two_bus_1ph_b(b_x: f64, b_r: f64) -> (SensitivityMatrices, Configuration) {
    (build_sensitivity(&two_bus_1ph_feeder(b_x, b_r)), Configuration::co_located([PQ]))
}

pub fn two_bus_3ph_b(b: &ImpedanceBlock) -> (SensitivityMatrices, Configuration) {
    (build_sensitivity(&two_bus_3ph_feeder(b)), Configuration::co_located([PQ]))
}

/// Balanced diagonal block with R/X ratio `d` and per-phase magnitude `l1`.
pub fn rx_block(d: f64, l1: f64) -> ImpedanceBlock {
    *make_rx_line(d, l1).expect("d >= 0, L1 > 0").block()
}

/// Purely reactive equal-mutual block with phase ratio `c_x`, norm `l2`.
pub fn phase_ratio_block(c_x: f64, l2: f64) -> ImpedanceBlock {
    *make_phase_ratio_line(c_x, l2).expect("c_x >= 0, L2 > 0").block()
}
