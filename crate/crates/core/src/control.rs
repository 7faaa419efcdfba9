//! Closed-loop quasi-steady-state models of droop (volt-var with
//! volt-watt) and phasor-based control (PBC).
//!
//! Droop: `e_{k+1} = (0 - [X R][F11; F21]) e_k + d_{k+1}` over magnitude
//! errors `e = v - 1`.
//!
//! PBC: `[e^v; e^δ]_{k+1} = (I - [X R; -R/2 X/2][F11 F12; F21 F22]) [e^v; e^δ]_k + c_k + d_k`
//! with inputs the setpoint increments `(u^q, u^p)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{PhaseSet, SensitivityMatrices};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlKind {
    Droop,
    Pbc,
}

impl std::str::FromStr for ControlKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "droop" => Ok(ControlKind::Droop),
            "pbc" => Ok(ControlKind::Pbc),
            other => Err(Error::InvalidArgument(format!("unknown control kind `{other}` (droop | pbc)"))),
        }
    }
}

/// Actuator-performance node pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "ApnpDoc")]
pub struct Apnp {
    pub actuator: String,
    pub performance: String,
    /// Phases controlled; defaults to the phases both nodes share.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<PhaseSet>,
}

// A bare node id is shorthand for a co-located pair.
#[derive(Deserialize)]
#[serde(untagged)]
enum ApnpDoc {
    Node(String),
    Pair {
        actuator: String,
        performance: String,
        #[serde(default)]
        phases: Option<PhaseSet>,
    },
}

impl From<ApnpDoc> for Apnp {
    fn from(doc: ApnpDoc) -> Self {
        match doc {
            ApnpDoc::Node(id) => Apnp::co_located(id),
            ApnpDoc::Pair { actuator, performance, phases } => Apnp { actuator, performance, phases },
        }
    }
}

impl Apnp {
    pub fn co_located(node: impl Into<String>) -> Self {
        let node = node.into();
        Apnp { actuator: node.clone(), performance: node, phases: None }
    }

    pub fn is_co_located(&self) -> bool {
        self.actuator == self.performance
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Configuration {
    pub apnps: Vec<Apnp>,
}

impl Configuration {
    pub fn co_located<S: Into<String>>(nodes: impl IntoIterator<Item = S>) -> Self {
        Configuration { apnps: nodes.into_iter().map(Apnp::co_located).collect() }
    }

    pub fn len(&self) -> usize {
        self.apnps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apnps.is_empty()
    }

    pub fn colocated_flags(&self) -> Vec<bool> {
        self.apnps.iter().map(Apnp::is_co_located).collect()
    }

    pub fn with(&self, apnp: Apnp) -> Configuration {
        let mut out = self.clone();
        out.apnps.push(apnp);
        out
    }

    pub fn occupies(&self, node: &str) -> bool {
        self.apnps.iter().any(|a| a.actuator == node || a.performance == node)
    }

    /// Distinct nodes touched by the configuration, actuators first.
    pub fn nodes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for id in self.apnps.iter().map(|a| &a.actuator).chain(self.apnps.iter().map(|a| &a.performance)) {
            if !out.contains(id) {
                out.push(id.clone());
            }
        }
        out
    }

    /// Validates the configuration against the sensitivity node set and
    /// returns the phase set of every pair.
    pub fn resolve(&self, sens: &SensitivityMatrices) -> Result<Vec<PhaseSet>> {
        let mut actuators = std::collections::HashSet::new();
        self.apnps
            .iter()
            .map(|a| {
                if !actuators.insert(a.actuator.as_str()) {
                    return Err(Error::Configuration(format!("duplicate actuator `{}`", a.actuator)));
                }
                let pa = sens.node_phases(&a.actuator).ok_or_else(|| Error::UnknownNode(a.actuator.clone()))?;
                let pp = sens.node_phases(&a.performance).ok_or_else(|| Error::UnknownNode(a.performance.clone()))?;
                let shared = PhaseSet::from_bits(pa.bits() & pp.bits()).ok_or_else(|| {
                    Error::Configuration(format!("`{}` and `{}` share no phase", a.actuator, a.performance))
                })?;
                match a.phases {
                    None => Ok(shared),
                    Some(ph) if ph.is_subset(shared) => Ok(ph),
                    Some(ph) => Err(Error::Configuration(format!(
                        "phases {ph} not available on pair ({}, {})",
                        a.actuator, a.performance
                    ))),
                }
            })
            .collect()
    }
}

/// Per-phase gains of one APNP. `q` feeds F11; `p` feeds F21 (droop) or
/// F22 (PBC). Entries for phases outside the pair are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApnpGains {
    pub q: [f64; 3],
    pub p: [f64; 3],
}

/// Compact, feeder-independent gain description, one entry per APNP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSet(pub Vec<ApnpGains>);

impl GainSet {
    /// Scalar-gain convention of the two-bus analysis: droop uses
    /// `F11 = F21 = a`, PBC uses `F11 = a`, `F22 = 2a`.
    pub fn uniform(cfg: &Configuration, kind: ControlKind, a: f64) -> GainSet {
        let p = match kind {
            ControlKind::Droop => a,
            ControlKind::Pbc => 2.0 * a,
        };
        GainSet(vec![ApnpGains { q: [a; 3], p: [p; 3] }; cfg.len()])
    }

    pub fn scaled(&self, s: f64) -> GainSet {
        GainSet(self.0.iter().map(|g| ApnpGains { q: g.q.map(|v| v * s), p: g.p.map(|v| v * s) }).collect())
    }

    pub fn to_matrix(&self, sens: &SensitivityMatrices, cfg: &Configuration, kind: ControlKind) -> Result<GainMatrix> {
        if self.0.len() != cfg.len() {
            return Err(Error::Structure(format!("{} gain entries for {} APNPs", self.0.len(), cfg.len())));
        }
        let phases = cfg.resolve(sens)?;
        let n = sens.dim();
        let mut f = GainMatrix::zeros(n);
        for ((apnp, ph), g) in cfg.apnps.iter().zip(phases).zip(&self.0) {
            for phase in ph.iter() {
                let row = sens.row(&apnp.actuator, phase).expect("resolved node");
                let col = sens.row(&apnp.performance, phase).expect("resolved node");
                f.f11[(row, col)] = g.q[phase.index()];
                match kind {
                    ControlKind::Droop => f.f21[(row, col)] = g.p[phase.index()],
                    ControlKind::Pbc => f.f22[(row, col)] = g.p[phase.index()],
                }
            }
        }
        Ok(f)
    }
}

/// Gain blocks, each `3n × 3n`. Rows index actuator slots, columns index
/// performance slots.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub f11: DMatrix<f64>,
    pub f12: DMatrix<f64>,
    pub f21: DMatrix<f64>,
    pub f22: DMatrix<f64>,
}

impl GainMatrix {
    pub fn zeros(n: usize) -> Self {
        let z = DMatrix::zeros(n, n);
        GainMatrix { f11: z.clone(), f12: z.clone(), f21: z.clone(), f22: z }
    }

    pub fn dim(&self) -> usize {
        self.f11.nrows()
    }

    /// Rejects entries outside the APNP pattern, non-diagonal phase blocks
    /// and blocks that the control kind does not use. Nothing is zeroed
    /// silently.
    pub fn validate(&self, sens: &SensitivityMatrices, cfg: &Configuration, kind: ControlKind) -> Result<()> {
        let n = sens.dim();
        for (name, m) in self.blocks() {
            if m.shape() != (n, n) {
                return Err(Error::Structure(format!("{name} is {:?}, expected {n}x{n}", m.shape())));
            }
        }
        let mut allowed = vec![false; n * n];
        for (apnp, ph) in cfg.apnps.iter().zip(cfg.resolve(sens)?) {
            for phase in ph.iter() {
                let row = sens.row(&apnp.actuator, phase).expect("resolved node");
                let col = sens.row(&apnp.performance, phase).expect("resolved node");
                allowed[row * n + col] = true;
            }
        }
        let unused: &[&str] = match kind {
            ControlKind::Droop => &["F12", "F22"],
            ControlKind::Pbc => &["F12", "F21"],
        };
        for (name, m) in self.blocks() {
            for i in 0..n {
                for j in 0..n {
                    let v = m[(i, j)];
                    if v == 0.0 {
                        continue;
                    }
                    if !v.is_finite() {
                        return Err(Error::Structure(format!("{name}({i},{j}) is not finite")));
                    }
                    if unused.contains(&name) {
                        return Err(Error::Structure(format!("{name} must be zero for {kind:?}, found {name}({i},{j}) = {v}")));
                    }
                    if !allowed[i * n + j] {
                        return Err(Error::Structure(format!(
                            "{name}({i},{j}) = {v} lies outside the actuator/performance pattern"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn blocks(&self) -> [(&'static str, &DMatrix<f64>); 4] {
        [("F11", &self.f11), ("F12", &self.f12), ("F21", &self.f21), ("F22", &self.f22)]
    }
}

/// Closed-loop discrete-time system `x_{k+1} = (A - B F) x_k`.
#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    kind: ControlKind,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    gains: GainMatrix,
    f: DMatrix<f64>,
    dynamics: DMatrix<f64>,
    active_mask: Vec<bool>,
}

impl ClosedLoopSystem {
    pub fn kind(&self) -> ControlKind {
        self.kind
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn gains(&self) -> &GainMatrix {
        &self.gains
    }
    /// Stacked feedback matrix as it multiplies `B`.
    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }
    pub fn dynamics(&self) -> &DMatrix<f64> {
        &self.dynamics
    }
    pub fn state_dim(&self) -> usize {
        self.dynamics.nrows()
    }
    /// State rows tracked at performance nodes on present phases.
    pub fn active_mask(&self) -> &[bool] {
        &self.active_mask
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.active_mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect()
    }

    /// Dynamics restricted to the active rows and columns.
    pub fn active_dynamics(&self) -> DMatrix<f64> {
        let idx = self.active_indices();
        DMatrix::from_fn(idx.len(), idx.len(), |i, j| self.dynamics[(idx[i], idx[j])])
    }
}

fn performance_mask(sens: &SensitivityMatrices, cfg: &Configuration) -> Result<Vec<bool>> {
    let mut mask = vec![false; sens.dim()];
    for (apnp, ph) in cfg.apnps.iter().zip(cfg.resolve(sens)?) {
        for phase in ph.iter() {
            mask[sens.row(&apnp.performance, phase).expect("resolved node")] = true;
        }
    }
    Ok(mask)
}

pub fn build_droop(sens: &SensitivityMatrices, cfg: &Configuration, gains: &GainMatrix) -> Result<ClosedLoopSystem> {
    gains.validate(sens, cfg, ControlKind::Droop)?;
    let n = sens.dim();
    let mut b = DMatrix::zeros(n, 2 * n);
    b.view_mut((0, 0), (n, n)).copy_from(sens.x());
    b.view_mut((0, n), (n, n)).copy_from(sens.r());
    let mut f = DMatrix::zeros(2 * n, n);
    f.view_mut((0, 0), (n, n)).copy_from(&gains.f11);
    f.view_mut((n, 0), (n, n)).copy_from(&gains.f21);
    let a = DMatrix::zeros(n, n);
    let dynamics = &a - &b * &f;
    Ok(ClosedLoopSystem {
        kind: ControlKind::Droop,
        a,
        b,
        gains: gains.clone(),
        f,
        dynamics,
        active_mask: performance_mask(sens, cfg)?,
    })
}

pub fn build_pbc(sens: &SensitivityMatrices, cfg: &Configuration, gains: &GainMatrix) -> Result<ClosedLoopSystem> {
    gains.validate(sens, cfg, ControlKind::Pbc)?;
    let n = sens.dim();
    let mut b = DMatrix::zeros(2 * n, 2 * n);
    b.view_mut((0, 0), (n, n)).copy_from(sens.x());
    b.view_mut((0, n), (n, n)).copy_from(sens.r());
    b.view_mut((n, 0), (n, n)).copy_from(&(sens.r() * -0.5));
    b.view_mut((n, n), (n, n)).copy_from(&(sens.x() * 0.5));
    let mut f = DMatrix::zeros(2 * n, 2 * n);
    f.view_mut((0, 0), (n, n)).copy_from(&gains.f11);
    f.view_mut((0, n), (n, n)).copy_from(&gains.f12);
    f.view_mut((n, 0), (n, n)).copy_from(&gains.f21);
    f.view_mut((n, n), (n, n)).copy_from(&gains.f22);
    let a = DMatrix::identity(2 * n, 2 * n);
    let dynamics = &a - &b * &f;
    let half = performance_mask(sens, cfg)?;
    let active_mask = half.iter().chain(half.iter()).copied().collect();
    Ok(ClosedLoopSystem { kind: ControlKind::Pbc, a, b, gains: gains.clone(), f, dynamics, active_mask })
}

pub fn build_system(
    kind: ControlKind,
    sens: &SensitivityMatrices,
    cfg: &Configuration,
    gains: &GainMatrix,
) -> Result<ClosedLoopSystem> {
    match kind {
        ControlKind::Droop => build_droop(sens, cfg, gains),
        ControlKind::Pbc => build_pbc(sens, cfg, gains),
    }
}

/// Steady-state shift `ΔSS = (I + B F)^{-1} ΔV^d` of a droop loop and the
/// per-row contraction `1 - |ΔSS_i| / |ΔV^d_i|` over the active rows.
#[derive(Debug, Clone)]
pub struct DisturbanceResponse {
    pub delta_ss: DVector<f64>,
    pub mean_contraction: f64,
    pub worst_contraction: f64,
    /// State row where the contraction is smallest.
    pub worst_row: Option<usize>,
}

pub fn disturbance_response(sys: &ClosedLoopSystem, dv: &DVector<f64>) -> Result<DisturbanceResponse> {
    if sys.kind != ControlKind::Droop {
        return Err(Error::InvalidArgument("disturbance response is defined for droop systems".into()));
    }
    let n = sys.state_dim();
    if dv.len() != n {
        return Err(Error::InvalidArgument(format!("disturbance has length {}, state is {n}", dv.len())));
    }
    let m = DMatrix::identity(n, n) + &sys.b * &sys.f;
    let delta_ss = m.lu().solve(dv).ok_or(Error::SingularMatrix("I + BF"))?;
    if delta_ss.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularMatrix("I + BF"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut worst = f64::INFINITY;
    let mut worst_row = None;
    for i in sys.active_indices() {
        if dv[i] == 0.0 {
            continue;
        }
        let c = 1.0 - delta_ss[i].abs() / dv[i].abs();
        sum += c;
        count += 1;
        if c < worst {
            worst = c;
            worst_row = Some(i);
        }
    }
    let mean_contraction = if count == 0 { 0.0 } else { sum / count as f64 };
    Ok(DisturbanceResponse {
        delta_ss,
        mean_contraction,
        worst_contraction: if count == 0 { 0.0 } else { worst },
        worst_row,
    })
}
