//! Quasi-steady-state time stepping: each step applies the control law to
//! the last measured voltages and then solves the power flow with the new
//! inverter setpoints.
//!
//! Two flow solvers are available. `Linear` is the LinDistFlow map used by
//! the closed-loop models, so its trajectories are the matrix-power
//! trajectories of the model exactly. `ExactTwoBus` solves the nonlinear
//! branch equations of a slack + PQ feeder and serves as the nonlinear check.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::control::{build_system, ClosedLoopSystem, Configuration, ControlKind, GainSet};
use crate::error::{Error, Result};
use crate::feeder::{build_sensitivity, Feeder, FeederFile, Phase, PhaseSet, SensitivityMatrices};

pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 0.5;
const FIXED_POINT_TOL: f64 = 1e-13;
const FIXED_POINT_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Linear,
    ExactTwoBus,
}

/// Phasor given as magnitude (p.u.) and the phase-A angle in degrees. The
/// other phases carry the nominal -120/+120 degree offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasorRef {
    pub mag: f64,
    pub angle_deg: f64,
}

impl PhasorRef {
    pub const NOMINAL: PhasorRef = PhasorRef { mag: 1.0, angle_deg: 0.0 };

    fn angle(&self, phase: Phase) -> f64 {
        self.angle_deg.to_radians() + phase.nominal_angle()
    }

    fn phasor(&self, phase: Phase) -> Complex64 {
        Complex64::from_polar(self.mag, self.angle(phase))
    }
}

/// Constant per-phase consumption in p.u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub node: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<PhaseSet>,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone)]
pub struct SimScenario {
    pub feeder: Feeder,
    pub cfg: Configuration,
    pub kind: ControlKind,
    pub gains: GainSet,
    pub loads: Vec<Load>,
    /// PBC reference; ignored by droop, whose reference is 1 p.u.
    pub v_ref: PhasorRef,
    /// Initial voltage at the performance nodes. The actuators start from
    /// setpoints that produce it; without it they start at zero.
    pub initial: Option<PhasorRef>,
    pub horizon: usize,
    pub solver: Solver,
    pub step_period_s: f64,
    pub divergence_threshold: f64,
}

impl SimScenario {
    pub fn new(feeder: Feeder, cfg: Configuration, kind: ControlKind, gains: GainSet) -> SimScenario {
        SimScenario {
            feeder,
            cfg,
            kind,
            gains,
            loads: Vec::new(),
            v_ref: PhasorRef::NOMINAL,
            initial: None,
            horizon: 100,
            solver: Solver::Linear,
            step_period_s: 1.0,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        }
    }
}

/// One row of the trajectory per step; step 0 is the initial condition.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub kind: ControlKind,
    pub slots: Vec<(String, Phase)>,
    pub vmag: Vec<Vec<f64>>,
    /// Radians, absolute (phase B sits near -120 degrees).
    pub angle: Vec<Vec<f64>>,
    pub p_inv: Vec<Vec<f64>>,
    pub q_inv: Vec<Vec<f64>>,
    /// Model error state per step over all `3n` (droop) or `6n` (PBC) rows.
    #[serde(skip)]
    pub errors: Vec<DVector<f64>>,
    /// Norm of the error state over the performance rows.
    pub error_norm: Vec<f64>,
    /// `‖e_k - e_{k-1}‖` over the performance rows; zero at step 0.
    pub increment_norm: Vec<f64>,
    pub divergence_step: Option<usize>,
    /// First step whose increment exceeds the first increment, reported for
    /// runs that do not converge.
    pub onset_step: Option<usize>,
    pub converged: bool,
    pub step_period_s: f64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.vmag.len()
    }

    pub fn divergence_time_s(&self) -> Option<f64> {
        self.divergence_step.map(|k| k as f64 * self.step_period_s)
    }

    pub fn onset_time_s(&self) -> Option<f64> {
        self.onset_step.map(|k| k as f64 * self.step_period_s)
    }

    /// `step,node,phase,vmag,angle,p_inv,q_inv` with the angle in degrees.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,node,phase,vmag,angle,p_inv,q_inv\n");
        for k in 0..self.steps() {
            for (s, (node, phase)) in self.slots.iter().enumerate() {
                out.push_str(&format!(
                    "{k},{node},{},{},{},{},{}\n",
                    phase.letter(),
                    self.vmag[k][s],
                    self.angle[k][s].to_degrees(),
                    self.p_inv[k][s],
                    self.q_inv[k][s]
                ));
            }
        }
        out
    }
}

/// New stacked setpoints `[q; p]`. Droop sets them from the current error,
/// PBC adds the increment `u = -F e` to the previous ones.
pub fn step_control(kind: ControlKind, f: &DMatrix<f64>, e: &DVector<f64>, prev: &DVector<f64>) -> DVector<f64> {
    let u = -(f * e);
    match kind {
        ControlKind::Droop => u,
        ControlKind::Pbc => prev + u,
    }
}

/// Linearized flow for net injections `(p, q)`: squared magnitudes
/// `v = R p + X q + 1` and angles `δ = δ_nom + (X p - R q)/2`.
pub fn solve_linear_flow(sens: &SensitivityMatrices, p: &DVector<f64>, q: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let v = sens.r() * p + sens.x() * q + DVector::from_element(sens.dim(), 1.0);
    let nominal = DVector::from_fn(sens.dim(), |i, _| Phase::from_index(i % 3).unwrap().nominal_angle());
    let delta = (sens.x() * p - sens.r() * q) * 0.5 + nominal;
    (v, delta)
}

/// Receiving-end voltage magnitude of a single-phase branch `r + jx` with
/// consumption `(p, q)` at the far end.
///
/// With `w = |V_j|²`, the branch equation reduces to
/// `w² + (2(rp + xq) - |V_i|²) w + (r² + x²)(p² + q²) = 0`; the operating
/// point is the larger root.
pub fn solve_exact_two_bus(r: f64, x: f64, p: f64, q: f64, v_slack: f64) -> Result<f64> {
    Ok(solve_exact_two_bus_w(r, x, p, q, v_slack)?.sqrt())
}

fn solve_exact_two_bus_w(r: f64, x: f64, p: f64, q: f64, v_slack: f64) -> Result<f64> {
    if !(v_slack > 0.0) {
        return Err(Error::InvalidArgument("slack voltage must be positive".into()));
    }
    let b = 2.0 * (r * p + x * q) - v_slack * v_slack;
    let c = (r * r + x * x) * (p * p + q * q);
    let disc = b * b - 4.0 * c;
    if !(disc >= 0.0) {
        return Err(Error::NoRealSolution);
    }
    // numerically stable larger root
    let w = if b <= 0.0 { (-b + disc.sqrt()) / 2.0 } else { 2.0 * c / (-b - disc.sqrt()) };
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::NoRealSolution);
    }
    Ok(w)
}

/// Receiving-end phasor of a single-phase branch.
pub fn solve_exact_two_bus_phasor(z: Complex64, s: Complex64, v_slack: Complex64) -> Result<Complex64> {
    let w = solve_exact_two_bus_w(z.re, z.im, s.re, s.im, v_slack.norm())?;
    let drop = (z.im * s.re - z.re * s.im).atan2(w + z.re * s.re + z.im * s.im);
    Ok(Complex64::from_polar(w.sqrt(), v_slack.arg() - drop))
}

/// Receiving-end phasors of a three-phase branch with block `z`, solved by
/// the fixed-point iteration `V = V_s - Z conj(S / V)` over present phases.
pub fn solve_three_phase_two_bus(
    z: &Matrix3<Complex64>,
    phases: PhaseSet,
    s: &[Complex64; 3],
    v_slack: &[Complex64; 3],
) -> Result<[Complex64; 3]> {
    let idx: Vec<usize> = phases.iter().map(Phase::index).collect();
    let mut v = *v_slack;
    for _ in 0..FIXED_POINT_MAX_ITER {
        let mut current = [Complex64::new(0.0, 0.0); 3];
        for &i in &idx {
            current[i] = (s[i] / v[i]).conj();
        }
        let mut next = v;
        let mut delta: f64 = 0.0;
        for &i in &idx {
            let drop: Complex64 = idx.iter().map(|&k| z[(i, k)] * current[k]).sum();
            next[i] = v_slack[i] - drop;
            delta = delta.max((next[i] - v[i]).norm());
        }
        if next.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) || idx.iter().any(|&i| next[i].norm() < 1e-6) {
            return Err(Error::NoRealSolution);
        }
        v = next;
        if delta <= FIXED_POINT_TOL {
            return Ok(v);
        }
    }
    Err(Error::NoRealSolution)
}

enum Flow {
    Linear,
    Exact { z: Matrix3<Complex64>, phases: PhaseSet },
}

struct Prepared {
    sens: SensitivityMatrices,
    sys: ClosedLoopSystem,
    flow: Flow,
    mask: Vec<bool>,
    p_load: DVector<f64>,
    q_load: DVector<f64>,
    v_ref: DVector<f64>,
    delta_ref: DVector<f64>,
}

impl Prepared {
    fn new(scn: &SimScenario) -> Result<Prepared> {
        if scn.horizon < 1 {
            return Err(Error::Scenario("horizon must be at least 1".into()));
        }
        if !(scn.step_period_s > 0.0) || !(scn.divergence_threshold > 0.0) {
            return Err(Error::Scenario("step period and divergence threshold must be positive".into()));
        }
        let sens = build_sensitivity(&scn.feeder);
        let gains = scn.gains.to_matrix(&sens, &scn.cfg, scn.kind)?;
        let sys = build_system(scn.kind, &sens, &scn.cfg, &gains)?;
        let n = sens.dim();
        let flow = match scn.solver {
            Solver::Linear => Flow::Linear,
            Solver::ExactTwoBus => {
                if scn.feeder.nodes().len() != 2 {
                    return Err(Error::Scenario("the exact two-bus solver needs a 2-node feeder".into()));
                }
                let line = &scn.feeder.lines()[0];
                Flow::Exact { z: *line.z.block(), phases: scn.feeder.node(&line.to)?.phases }
            }
        };
        let mut p_load = DVector::zeros(n);
        let mut q_load = DVector::zeros(n);
        for load in &scn.loads {
            let node_phases = sens.node_phases(&load.node).ok_or_else(|| Error::UnknownNode(load.node.clone()))?;
            let phases = load.phases.unwrap_or(node_phases);
            if !phases.is_subset(node_phases) {
                return Err(Error::Scenario(format!("load phases {phases} not present at `{}`", load.node)));
            }
            if !(load.p.is_finite() && load.q.is_finite()) {
                return Err(Error::Scenario(format!("non-finite load at `{}`", load.node)));
            }
            for ph in phases.iter() {
                let row = sens.row(&load.node, ph).unwrap();
                p_load[row] += load.p;
                q_load[row] += load.q;
            }
        }
        let mask = sens.mask();
        let r = &scn.v_ref;
        let v_ref = DVector::from_fn(n, |i, _| if mask[i] { r.mag * r.mag } else { 1.0 });
        let delta_ref = DVector::from_fn(n, |i, _| {
            let ph = Phase::from_index(i % 3).unwrap();
            if mask[i] {
                r.angle(ph)
            } else {
                ph.nominal_angle()
            }
        });
        Ok(Prepared { sens, sys, flow, mask, p_load, q_load, v_ref, delta_ref })
    }

    fn n(&self) -> usize {
        self.sens.dim()
    }

    /// Squared magnitudes and angles for stacked setpoints `[q; p]`.
    fn flow(&self, s: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = self.n();
        let q = s.rows(0, n) - &self.q_load;
        let p = s.rows(n, n) - &self.p_load;
        match &self.flow {
            Flow::Linear => Ok(solve_linear_flow(&self.sens, &p, &q)),
            Flow::Exact { z, phases } => {
                let mut v = DVector::from_element(n, 1.0);
                let mut delta = DVector::from_fn(n, |i, _| Phase::from_index(i).unwrap().nominal_angle());
                // consumption is the negated net injection
                let cons: [Complex64; 3] = std::array::from_fn(|i| Complex64::new(-p[i], -q[i]));
                let out = if phases.len() == 1 {
                    let i = phases.iter().next().unwrap().index();
                    let mut out = [Complex64::new(0.0, 0.0); 3];
                    out[i] = solve_exact_two_bus_phasor(z[(i, i)], cons[i], slack_phasor(i))?;
                    out
                } else {
                    solve_three_phase_two_bus(z, *phases, &cons, &std::array::from_fn(slack_phasor))?
                };
                for ph in phases.iter() {
                    let i = ph.index();
                    v[i] = out[i].norm_sqr();
                    delta[i] = out[i].arg();
                }
                Ok((v, delta))
            }
        }
    }

    fn error(&self, v: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        match self.sys.kind() {
            ControlKind::Droop => DVector::from_fn(n, |i, _| if self.mask[i] { v[i] - 1.0 } else { 0.0 }),
            ControlKind::Pbc => DVector::from_fn(2 * n, |i, _| {
                let k = i % n;
                if !self.mask[k] {
                    0.0
                } else if i < n {
                    v[k] - self.v_ref[k]
                } else {
                    wrap_angle(delta[k] - self.delta_ref[k])
                }
            }),
        }
    }

    /// Setpoints that put the performance slots at `init`.
    fn initial_setpoints(&self, scn: &SimScenario, init: &PhasorRef) -> Result<DVector<f64>> {
        let n = self.n();
        let mut s = DVector::zeros(2 * n);
        let pairs = scn.cfg.resolve(&self.sens)?;
        let mut act = Vec::new();
        let mut perf = Vec::new();
        for (apnp, ph) in scn.cfg.apnps.iter().zip(pairs) {
            for phase in ph.iter() {
                act.push(self.sens.row(&apnp.actuator, phase).unwrap());
                perf.push(self.sens.row(&apnp.performance, phase).unwrap());
            }
        }
        if act.is_empty() {
            return Ok(s);
        }
        match &self.flow {
            Flow::Exact { z, phases } => {
                // only the PQ node exists; find the consistent injection
                let target: [Complex64; 3] = std::array::from_fn(|i| {
                    if phases.contains(Phase::from_index(i).unwrap()) {
                        init.phasor(Phase::from_index(i).unwrap())
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                });
                let idx: Vec<usize> = phases.iter().map(Phase::index).collect();
                let k = idx.len();
                let zr = nalgebra::DMatrix::from_fn(k, k, |a, b| z[(idx[a], idx[b])]);
                let dv = nalgebra::DVector::from_fn(k, |a, _| slack_phasor(idx[a]) - target[idx[a]]);
                let current = zr.lu().solve(&dv).ok_or(Error::SingularMatrix("line impedance"))?;
                for (a, &i) in idx.iter().enumerate() {
                    let cons = target[i] * current[a].conj();
                    if act.contains(&i) {
                        s[i] = self.q_load[i] - cons.im;
                        s[n + i] = self.p_load[i] - cons.re;
                    }
                }
                Ok(s)
            }
            Flow::Linear => {
                // [v; δ]_perf = base + [X R; -R/2 X/2]_(perf, act) [q; p]_act
                let (v0, d0) = self.flow(&s)?;
                let m = act.len();
                let x = self.sens.x();
                let r = self.sens.r();
                let mut a = DMatrix::zeros(2 * m, 2 * m);
                let mut rhs = DVector::zeros(2 * m);
                for (i, &pi) in perf.iter().enumerate() {
                    for (j, &aj) in act.iter().enumerate() {
                        a[(i, j)] = x[(pi, aj)];
                        a[(i, m + j)] = r[(pi, aj)];
                        a[(m + i, j)] = -0.5 * r[(pi, aj)];
                        a[(m + i, m + j)] = 0.5 * x[(pi, aj)];
                    }
                    let ph = Phase::from_index(pi % 3).unwrap();
                    rhs[i] = init.mag * init.mag - v0[pi];
                    rhs[m + i] = wrap_angle(init.angle(ph) - d0[pi]);
                }
                let sol = a.lu().solve(&rhs).ok_or(Error::SingularMatrix("actuator sensitivity block"))?;
                for (j, &aj) in act.iter().enumerate() {
                    s[aj] = sol[j];
                    s[n + aj] = sol[m + j];
                }
                Ok(s)
            }
        }
    }
}

fn slack_phasor(i: usize) -> Complex64 {
    Complex64::from_polar(1.0, Phase::from_index(i).unwrap().nominal_angle())
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        w
    }
}

fn masked_norm(e: &DVector<f64>, mask: &[bool]) -> f64 {
    e.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| v * v).sum::<f64>().sqrt()
}

/// Runs the scenario for `horizon` control steps. Solver failures end the
/// run and are reported as divergence.
pub fn run(scn: &SimScenario) -> Result<Trajectory> {
    let prep = Prepared::new(scn)?;
    let n = prep.n();
    let sys = &prep.sys;
    let perf_mask = sys.active_mask().to_vec();
    let slot_rows: Vec<usize> = (0..n).filter(|&i| prep.mask[i]).collect();
    let slots = slot_rows
        .iter()
        .map(|&i| (prep.sens.nodes()[i / 3].clone(), Phase::from_index(i % 3).unwrap()))
        .collect();

    let mut s = match &scn.initial {
        Some(init) => prep.initial_setpoints(scn, init)?,
        None => DVector::zeros(2 * n),
    };
    let mut traj = Trajectory {
        kind: scn.kind,
        slots,
        vmag: Vec::new(),
        angle: Vec::new(),
        p_inv: Vec::new(),
        q_inv: Vec::new(),
        errors: Vec::new(),
        error_norm: Vec::new(),
        increment_norm: Vec::new(),
        divergence_step: None,
        onset_step: None,
        converged: false,
        step_period_s: scn.step_period_s,
    };

    for k in 0..=scn.horizon {
        if k > 0 {
            s = step_control(sys.kind(), sys.f(), traj.errors.last().unwrap(), &s);
        }
        let (v, delta) = match prep.flow(&s) {
            Ok(out) => out,
            Err(Error::NoRealSolution) => {
                traj.divergence_step = Some(k);
                break;
            }
            Err(e) => return Err(e),
        };
        let e = prep.error(&v, &delta);
        let vmag: Vec<f64> = slot_rows.iter().map(|&i| v[i].max(0.0).sqrt()).collect();
        let blown = slot_rows
            .iter()
            .any(|&i| !(v[i] > 0.0) || !v[i].is_finite() || (v[i].sqrt() - 1.0).abs() > scn.divergence_threshold);
        traj.error_norm.push(masked_norm(&e, &perf_mask));
        let inc = traj.errors.last().map_or(0.0, |prev| masked_norm(&(&e - prev), &perf_mask));
        traj.increment_norm.push(inc);
        traj.vmag.push(vmag);
        traj.angle.push(slot_rows.iter().map(|&i| delta[i]).collect());
        traj.q_inv.push(slot_rows.iter().map(|&i| s[i]).collect());
        traj.p_inv.push(slot_rows.iter().map(|&i| s[n + i]).collect());
        traj.errors.push(e);
        if blown {
            traj.divergence_step = Some(k);
            break;
        }
    }

    traj.converged = traj.divergence_step.is_none() && settled(&traj.increment_norm);
    if !traj.converged && traj.increment_norm.len() > 1 {
        let first = traj.increment_norm[1];
        traj.onset_step = traj.increment_norm.iter().enumerate().skip(2).find(|(_, v)| **v > first).map(|(k, _)| k);
        if traj.onset_step.is_none() {
            traj.onset_step = traj.divergence_step;
        }
    }
    Ok(traj)
}

/// The increments over the last tenth of the run do not exceed those of
/// the tenth before, or have vanished.
fn settled(inc: &[f64]) -> bool {
    let h = inc.len() - 1;
    if h == 0 || inc[h] < 1e-10 {
        return true;
    }
    let w = (h / 10).max(1);
    if h < 2 * w {
        return inc[h] <= inc[1];
    }
    let max = |a: usize, b: usize| inc[a..b].iter().copied().fold(0.0, f64::max);
    max(h - w + 1, h + 1) <= max(h - 2 * w + 1, h - w + 1)
}

/// Gain scale at which a simulated run stops converging, located by
/// bisection on `make(a)`. The search starts from `(stable, unstable)`.
pub fn straddle_acrit<F>(make: F, stable: f64, unstable: f64, rel_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> SimScenario,
{
    let converges = |a: f64| run(&make(a)).map(|t| t.converged);
    if !converges(stable)? || converges(unstable)? {
        return Err(Error::InvalidArgument("straddle bracket does not bracket the stability boundary".into()));
    }
    let (mut lo, mut hi) = (stable, unstable);
    while hi - lo > rel_tol * lo {
        let mid = 0.5 * (lo + hi);
        if converges(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum FeederRef {
    Path(String),
    Inline(FeederFile),
}

impl FeederRef {
    pub fn resolve(self, base_dir: Option<&Path>) -> Result<Feeder> {
        match self {
            FeederRef::Inline(f) => f.into_feeder(),
            FeederRef::Path(p) => {
                let path = match base_dir {
                    Some(dir) if Path::new(&p).is_relative() => dir.join(p),
                    _ => p.into(),
                };
                crate::feeder::load_feeder(path)
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadDoc {
    pub node: String,
    #[serde(default)]
    pub phases: Option<PhaseSet>,
    pub p_kw: f64,
    pub q_kvar: f64,
}

/// Scenario file. Loads are per phase in kW/kVAR and converted with the
/// feeder's declared base; either `gains` or a scalar `gain_scale` is given.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub feeder: FeederRef,
    pub kind: ControlKind,
    pub config: Configuration,
    #[serde(default)]
    pub gains: Option<GainSet>,
    #[serde(default)]
    pub gain_scale: Option<f64>,
    #[serde(default)]
    pub loads: Vec<LoadDoc>,
    #[serde(default)]
    pub v_ref: Option<PhasorRef>,
    #[serde(default)]
    pub initial: Option<PhasorRef>,
    pub horizon: usize,
    #[serde(default = "default_solver")]
    pub solver: Solver,
    #[serde(default = "default_period")]
    pub step_period_s: f64,
    #[serde(default = "default_threshold")]
    pub divergence_threshold: f64,
}

fn default_solver() -> Solver {
    Solver::Linear
}
fn default_period() -> f64 {
    1.0
}
fn default_threshold() -> f64 {
    DEFAULT_DIVERGENCE_THRESHOLD
}

impl ScenarioDoc {
    pub fn into_scenario(self, base_dir: Option<&Path>) -> Result<SimScenario> {
        let feeder = self.feeder.resolve(base_dir)?;
        let gains = match (self.gains, self.gain_scale) {
            (Some(g), None) => g,
            (None, Some(a)) if a.is_finite() && a >= 0.0 => GainSet::uniform(&self.config, self.kind, a),
            (None, Some(a)) => return Err(Error::Scenario(format!("gain_scale must be finite and non-negative, got {a}"))),
            _ => return Err(Error::Scenario("exactly one of `gains` and `gain_scale` is required".into())),
        };
        let kw_per_pu = feeder.base_mva() * 1000.0;
        let loads = self
            .loads
            .into_iter()
            .map(|l| Load { node: l.node, phases: l.phases, p: l.p_kw / kw_per_pu, q: l.q_kvar / kw_per_pu })
            .collect();
        Ok(SimScenario {
            feeder,
            cfg: self.config,
            kind: self.kind,
            gains,
            loads,
            v_ref: self.v_ref.unwrap_or(PhasorRef::NOMINAL),
            initial: self.initial,
            horizon: self.horizon,
            solver: self.solver,
            step_period_s: self.step_period_s,
            divergence_threshold: self.divergence_threshold,
        })
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<SimScenario> {
    let path = path.as_ref();
    let doc: ScenarioDoc =
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Parse(e.to_string()))?;
    doc.into_scenario(path.parent())
}
