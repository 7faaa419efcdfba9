//! Spectral analysis of closed-loop systems: dominant eigenvalues,
//! critical gains (closed form for two-bus families, bisection otherwise),
//! gain sweeps and the good-configuration predicate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{build_system, disturbance_response, ClosedLoopSystem, ControlKind, DisturbanceResponse, GainSet};
use crate::error::{Error, Result};
use crate::fixtures;

/// Uniform voltage step used to score droop disturbance rejection, p.u.
pub const DISTURBANCE_STEP: f64 = 0.535;
/// Minimum mean steady-state error contraction for a good droop loop.
pub const MIN_CONTRACTION: f64 = 0.07;

const DOMINANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct EigenReport {
    pub eigenvalues: Vec<Complex64>,
    /// Every eigenvalue whose modulus ties the spectral radius.
    pub dominant: Vec<Complex64>,
    pub spectral_radius: f64,
    pub stable: bool,
}

impl EigenReport {
    pub fn from_eigenvalues(eigenvalues: Vec<Complex64>) -> EigenReport {
        let spectral_radius = eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
        let dominant = eigenvalues
            .iter()
            .filter(|l| spectral_radius - l.norm() <= DOMINANCE_TOL * spectral_radius.max(1.0))
            .copied()
            .collect();
        EigenReport { eigenvalues, dominant, spectral_radius, stable: spectral_radius < 1.0 }
    }

    /// Moduli sorted in decreasing order, with multiplicity.
    pub fn sorted_moduli(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self.eigenvalues.iter().map(|l| l.norm()).collect();
        m.sort_by(|a, b| b.total_cmp(a));
        m
    }

    /// Second-largest modulus counting multiplicity.
    pub fn subdominant_modulus(&self) -> Option<f64> {
        self.sorted_moduli().get(1).copied()
    }
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure);
    }
    // nalgebra's Schur iteration stalls on some nearly decoupled closed
    // loops (switch-only paths), so the dense eigensolve goes through faer
    let fm = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let ev = fm.eigenvalues().map_err(|_| Error::NumericalFailure)?;
    if ev.iter().any(|l| !(l.re.is_finite() && l.im.is_finite())) {
        return Err(Error::NumericalFailure);
    }
    Ok(ev.iter().map(|l| Complex64::new(l.re, l.im)).collect())
}

/// Eigenvalues of the dynamics restricted to the active-phase subspace.
pub fn eigen_report(sys: &ClosedLoopSystem) -> Result<EigenReport> {
    Ok(EigenReport::from_eigenvalues(eigenvalues(&sys.active_dynamics())?))
}

pub fn spectral_radius(sys: &ClosedLoopSystem) -> Result<f64> {
    Ok(eigen_report(sys)?.spectral_radius)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcritMethod {
    Analytic,
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalGain {
    pub a_crit: f64,
    pub method: AcritMethod,
    /// `(stable gain, unstable gain)` bracketing the crossing.
    pub bracket: (f64, f64),
    pub tol: f64,
}

/// Two-bus systems with a scalar gain `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TwoBusFamily {
    /// Single phase, `Z = jX`.
    #[serde(rename = "pbc_1ph")]
    Pbc1ph { x: f64 },
    #[serde(rename = "droop_1ph")]
    Droop1ph { x: f64 },
    /// Balanced three-phase diagonal block with R/X ratio `d`, `|Z| = l1`.
    PbcRx { d: f64, l1: f64 },
    DroopRx { d: f64, l1: f64 },
    /// Purely reactive equal-mutual block with phase ratio `cx`, norm `l2`.
    PbcPhase { cx: f64, l2: f64 },
    DroopPhase { cx: f64, l2: f64 },
}

impl TwoBusFamily {
    pub fn name(&self) -> &'static str {
        match self {
            TwoBusFamily::Pbc1ph { .. } => "pbc_1ph",
            TwoBusFamily::Droop1ph { .. } => "droop_1ph",
            TwoBusFamily::PbcRx { .. } => "pbc_rx",
            TwoBusFamily::DroopRx { .. } => "droop_rx",
            TwoBusFamily::PbcPhase { .. } => "pbc_phase",
            TwoBusFamily::DroopPhase { .. } => "droop_phase",
        }
    }

    pub fn kind(&self) -> ControlKind {
        match self {
            TwoBusFamily::Pbc1ph { .. } | TwoBusFamily::PbcRx { .. } | TwoBusFamily::PbcPhase { .. } => ControlKind::Pbc,
            _ => ControlKind::Droop,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            TwoBusFamily::Pbc1ph { x } | TwoBusFamily::Droop1ph { x } => x > 0.0 && x.is_finite(),
            TwoBusFamily::PbcRx { d, l1 } | TwoBusFamily::DroopRx { d, l1 } => d >= 0.0 && l1 > 0.0 && l1.is_finite(),
            TwoBusFamily::PbcPhase { cx, l2 } | TwoBusFamily::DroopPhase { cx, l2 } => {
                cx >= 0.0 && l2 > 0.0 && l2.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid parameters for {}: {self:?}", self.name())))
        }
    }

    /// Closed loop at scalar gain `a`, with the B-matrix entries set to the
    /// family parameters.
    pub fn system(&self, a: f64) -> Result<ClosedLoopSystem> {
        self.validate()?;
        let (sens, cfg) = match *self {
            TwoBusFamily::Pbc1ph { x } | TwoBusFamily::Droop1ph { x } => fixtures::two_bus_1ph_b(x, 0.0),
            TwoBusFamily::PbcRx { d, l1 } | TwoBusFamily::DroopRx { d, l1 } => {
                fixtures::two_bus_3ph_b(&fixtures::rx_block(d, l1))
            }
            TwoBusFamily::PbcPhase { cx, l2 } | TwoBusFamily::DroopPhase { cx, l2 } => {
                fixtures::two_bus_3ph_b(&fixtures::phase_ratio_block(cx, l2))
            }
        };
        let kind = self.kind();
        let gains = GainSet::uniform(&cfg, kind, a).to_matrix(&sens, &cfg, kind)?;
        build_system(kind, &sens, &cfg, &gains)
    }
}

/// Closed-form critical gain of the two-bus families that have one.
pub fn analytic_acrit(family: TwoBusFamily) -> Result<CriticalGain> {
    family.validate()?;
    let a = match family {
        TwoBusFamily::Pbc1ph { x } => 2.0 / x,
        TwoBusFamily::Droop1ph { x } => 1.0 / x,
        TwoBusFamily::PbcRx { d, l1 } => 2.0 / (l1 * (d * d + 1.0).sqrt()),
        TwoBusFamily::DroopRx { d, l1 } => (d * d + 1.0).sqrt() / (l1 * (d + 1.0)),
        TwoBusFamily::DroopPhase { l2, .. } => 1.0 / l2,
        TwoBusFamily::PbcPhase { cx, .. } if cx >= 2.0 => {
            return Err(Error::NoStabilizingGain { lo: 0.0, rho: 1.0 });
        }
        TwoBusFamily::PbcPhase { l2, .. } => 2.0 / l2,
    };
    Ok(CriticalGain { a_crit: a, method: AcritMethod::Analytic, bracket: (a, a), tol: 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectOptions {
    pub lo: f64,
    pub hi: f64,
    /// Absolute bracket width at termination.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BisectOptions {
    fn default() -> Self {
        BisectOptions { lo: 1e-6, hi: 1e4, tol: 1e-6, max_iter: 60 }
    }
}

/// Locates the gain scale where the spectral radius first reaches one.
///
/// Geometric midpoints are used while the bracket spans more than a factor
/// of two, arithmetic ones afterwards.
pub fn bisect_acrit<F>(builder: F, opts: BisectOptions) -> Result<CriticalGain>
where
    F: Fn(f64) -> Result<ClosedLoopSystem>,
{
    if !(opts.lo > 0.0 && opts.hi > opts.lo && opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("bad bisection bracket {opts:?}")));
    }
    let rho = |a: f64| builder(a).and_then(|s| spectral_radius(&s));
    let rho_lo = rho(opts.lo)?;
    if rho_lo >= 1.0 {
        return Err(Error::NoStabilizingGain { lo: opts.lo, rho: rho_lo });
    }
    if rho(opts.hi)? < 1.0 {
        return Err(Error::Unbounded { hi: opts.hi });
    }
    let (mut lo, mut hi) = (opts.lo, opts.hi);
    for _ in 0..opts.max_iter {
        if hi - lo <= opts.tol {
            break;
        }
        let mid = if hi > 2.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if rho(mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CriticalGain { a_crit: 0.5 * (lo + hi), method: AcritMethod::Bisection, bracket: (lo, hi), tol: opts.tol })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub a: f64,
    pub rho: f64,
    pub stable: bool,
}

/// Spectral radius at every gain value, evaluated in parallel.
pub fn gain_sweep<F>(builder: F, a_values: &[f64]) -> Result<Vec<SweepPoint>>
where
    F: Fn(f64) -> Result<ClosedLoopSystem> + Sync,
{
    if let Some(bad) = a_values.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(Error::InvalidArgument(format!("gain values must be finite and non-negative, got {bad}")));
    }
    a_values
        .par_iter()
        .map(|&a| {
            let rho = spectral_radius(&builder(a)?)?;
            Ok(SweepPoint { a, rho, stable: rho < 1.0 })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("a,rho,stable\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.a, p.rho, p.stable));
    }
    out
}

#[derive(Debug, Clone)]
pub struct Goodness {
    pub good: bool,
    pub spectral_radius: f64,
    /// Present for droop systems.
    pub disturbance: Option<DisturbanceResponse>,
}

/// PBC: stable. Droop: stable and the mean steady-state error contraction
/// under a uniform 0.535 p.u. step is at least 7%.
pub fn is_good(sys: &ClosedLoopSystem) -> Result<Goodness> {
    let rho = spectral_radius(sys)?;
    match sys.kind() {
        ControlKind::Pbc => Ok(Goodness { good: rho < 1.0, spectral_radius: rho, disturbance: None }),
        ControlKind::Droop => {
            let dv = DVector::from_iterator(
                sys.state_dim(),
                sys.active_mask().iter().map(|&m| if m { DISTURBANCE_STEP } else { 0.0 }),
            );
            let resp = disturbance_response(sys, &dv)?;
            let good = rho < 1.0 && resp.mean_contraction >= MIN_CONTRACTION;
            Ok(Goodness { good, spectral_radius: rho, disturbance: Some(resp) })
        }
    }
}
