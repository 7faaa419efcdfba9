//! Impedance metrics of a line block: R/X ratio, phase ratios and line
//! length, plus synthesis of blocks with prescribed metrics and feeder-wide
//! ratio scaling at constant spectral-norm length.

use nalgebra::Matrix3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{Feeder, ImpedanceBlock, LineImpedance, Phase, PhaseSet};

/// One value per phase slot; `None` for absent phases or undefined ratios.
pub type PhaseTriple = [Option<f64>; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioKind {
    Rx,
    Phase,
}

impl std::str::FromStr for RatioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rx" => Ok(RatioKind::Rx),
            "phase" => Ok(RatioKind::Phase),
            other => Err(Error::InvalidArgument(format!("unknown ratio kind `{other}` (rx | phase)"))),
        }
    }
}

/// Which matrix a phase ratio is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Reactance,
    Resistance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineLength {
    /// `|Z_ii|` per present phase.
    pub per_phase: PhaseTriple,
    /// Largest singular value of the complex block.
    pub spectral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineMetrics {
    pub rx_ratios: PhaseTriple,
    pub phase_ratios_x: PhaseTriple,
    pub phase_ratios_r: PhaseTriple,
    pub length_l1: PhaseTriple,
    pub length_l2: f64,
}

impl LineMetrics {
    /// All metrics at once; undefined ratios come back as `None` instead of
    /// an error.
    pub fn of(z: &LineImpedance) -> LineMetrics {
        Self::of_block(z.block(), z.phases())
    }

    pub fn of_block(z: &ImpedanceBlock, phases: PhaseSet) -> LineMetrics {
        let len = block_length(z, phases);
        LineMetrics {
            rx_ratios: per_phase(phases, |i| ratio(z[(i, i)].re, z[(i, i)].im)),
            phase_ratios_x: per_phase(phases, |i| mutual_ratio(&z.map(|c| c.im), phases, i)),
            phase_ratios_r: per_phase(phases, |i| mutual_ratio(&z.map(|c| c.re), phases, i)),
            length_l1: len.per_phase,
            length_l2: len.spectral,
        }
    }
}

fn per_phase(phases: PhaseSet, f: impl Fn(usize) -> Option<f64>) -> PhaseTriple {
    std::array::from_fn(|i| if phases.mask()[i] { f(i) } else { None })
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

// (M_ij + M_ik) / M_ii over the other two phase slots.
fn mutual_ratio(m: &Matrix3<f64>, phases: PhaseSet, i: usize) -> Option<f64> {
    let mutual: f64 = (0..3).filter(|&j| j != i && phases.mask()[j]).map(|j| m[(i, j)]).sum();
    ratio(mutual, m[(i, i)])
}

/// `d_i = R_ii / X_ii` on each present phase.
pub fn rx_ratio(z: &LineImpedance) -> Result<PhaseTriple> {
    let b = z.block();
    let zero: Vec<Phase> = z.phases().iter().filter(|p| b[(p.index(), p.index())].im == 0.0).collect();
    if !zero.is_empty() {
        return Err(Error::DivisionByZeroReactance(zero));
    }
    Ok(per_phase(z.phases(), |i| ratio(b[(i, i)].re, b[(i, i)].im)))
}

/// Phase ratios `c_{x,i}` (or `c_{r,i}`): sum of the mutual terms in row
/// `i` divided by the self term.
pub fn phase_ratio(z: &LineImpedance, part: Part) -> Result<PhaseTriple> {
    let (m, what) = match part {
        Part::Reactance => (z.reactance(), "reactance"),
        Part::Resistance => (z.resistance(), "resistance"),
    };
    let zero: Vec<Phase> = z.phases().iter().filter(|p| m[(p.index(), p.index())] == 0.0).collect();
    if !zero.is_empty() {
        return Err(Error::DivisionByZero { what, phases: zero });
    }
    Ok(per_phase(z.phases(), |i| mutual_ratio(&m, z.phases(), i)))
}

pub fn line_length(z: &LineImpedance) -> LineLength {
    block_length(z.block(), z.phases())
}

pub fn block_length(z: &ImpedanceBlock, phases: PhaseSet) -> LineLength {
    LineLength { per_phase: per_phase(phases, |i| Some(z[(i, i)].norm())), spectral: spectral_norm(z) }
}

pub fn spectral_norm(z: &ImpedanceBlock) -> f64 {
    z.singular_values().max()
}

/// Balanced three-phase diagonal block with R/X ratio `d` and per-phase
/// magnitude `l1`.
pub fn make_rx_line(d: f64, l1: f64) -> Result<LineImpedance> {
    if !(d >= 0.0 && l1 > 0.0 && d.is_finite() && l1.is_finite()) {
        return Err(Error::InvalidArgument(format!("need d >= 0 and L1 > 0, got d={d}, L1={l1}")));
    }
    let x = l1 / (d * d + 1.0).sqrt();
    LineImpedance::diagonal(d * x, x, PhaseSet::ABC)
}

/// Purely reactive three-phase block with equal mutuals, phase ratio `c_x`
/// and spectral norm `l2`.
pub fn make_phase_ratio_line(c_x: f64, l2: f64) -> Result<LineImpedance> {
    if !(c_x >= 0.0 && l2 > 0.0 && c_x.is_finite() && l2.is_finite()) {
        return Err(Error::InvalidArgument(format!("need c_x >= 0 and L2 > 0, got c_x={c_x}, L2={l2}")));
    }
    let x = l2 / (1.0 + c_x);
    let xm = c_x * x / 2.0;
    let z = ImpedanceBlock::from_fn(|i, j| Complex64::new(0.0, if i == j { x } else { xm }));
    LineImpedance::new(z, PhaseSet::ABC)
}

/// Result of [`scale_feeder_ratios`]: the modified feeder plus ids of lines
/// left untouched because a present phase has zero reactance.
#[derive(Debug, Clone)]
pub struct ScaledFeeder {
    pub feeder: Feeder,
    pub skipped: Vec<String>,
}

/// Multiplies the R/X ratios (or the phase ratios) of every line by
/// `factor` while holding each line's spectral norm fixed.
pub fn scale_feeder_ratios(f: &Feeder, which: RatioKind, factor: f64) -> Result<ScaledFeeder> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale factor must be positive, got {factor}")));
    }
    let mut skipped = Vec::new();
    let feeder = f.map_impedances(|line| {
        let z = line.z.block();
        if which == RatioKind::Rx && line.z.phases().iter().any(|p| z[(p.index(), p.index())].im == 0.0) {
            log::warn!("line {} has zero reactance on a present phase; R/X scaling skipped", line.id());
            skipped.push(line.id());
            return Ok(line.z.clone());
        }
        let scaled = match which {
            RatioKind::Rx => z.map(|c| Complex64::new(c.re * factor, c.im)),
            RatioKind::Phase => ImpedanceBlock::from_fn(|i, j| if i == j { z[(i, j)] } else { z[(i, j)] * factor }),
        };
        let new_norm = spectral_norm(&scaled);
        if new_norm == 0.0 {
            return Err(Error::DegenerateBlock(line.id()));
        }
        let s = spectral_norm(z) / new_norm;
        LineImpedance::new(scaled * Complex64::new(s, 0.0), line.z.phases())
    })?;
    Ok(ScaledFeeder { feeder, skipped })
}

/// Metrics of the summed impedance along a node's substation path.
pub fn path_metrics(f: &Feeder, node_id: &str) -> Result<LineMetrics> {
    let phases = f.node(node_id)?.phases;
    Ok(LineMetrics::of_block(&f.path_impedance(node_id)?, phases))
}

/// CSV with one row per line and one per node path (`path:<node>`).
pub fn metrics_csv(f: &Feeder) -> Result<String> {
    use std::fmt::Write;
    let mut out = String::from("line_id,d1,d2,d3,cx1,cx2,cx3,cr1,cr2,cr3,L1a,L1b,L1c,L2\n");
    let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let mut row = |id: &str, m: &LineMetrics| {
        let mut cols = vec![id.to_string()];
        for triple in [m.rx_ratios, m.phase_ratios_x, m.phase_ratios_r, m.length_l1] {
            cols.extend(triple.iter().map(|v| cell(*v)));
        }
        cols.push(format!("{}", m.length_l2));
        writeln!(out, "{}", cols.join(",")).expect("writing to a String");
    };
    for line in f.lines() {
        row(&line.id(), &LineMetrics::of(&line.z));
    }
    for node in f.load_nodes() {
        row(&format!("path:{}", node.id), &path_metrics(f, &node.id)?);
    }
    Ok(out)
}
