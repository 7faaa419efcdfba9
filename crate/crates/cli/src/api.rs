//! Request and response documents shared by the command line and the HTTP
//! service. Both sides parse with [`parse`] and render with [`to_json`], so an
//! identical request yields identical bytes.

use std::path::PathBuf;
use std::sync::Arc;

use gridstab::control::Configuration;
use gridstab::metrics::{path_metrics, LineMetrics, PhaseTriple, RatioKind};
use gridstab::placement::{self, CrossApplyOptions, HeatmapResult, SamplingSpec};
use gridstab::sim::{self, FeederRef, ScenarioDoc, Trajectory};
use gridstab::stability::{self, AcritMethod, BisectOptions, CriticalGain, SweepPoint, TwoBusFamily};
use gridstab::{build_sensitivity, build_system, ClosedLoopSystem, ControlKind, Feeder, GainSet, PhaseSet};
use serde::de::{DeserializeOwned, Error as _};
use serde::{Deserialize, Deserializer, Serialize};

#[derive(Debug)]
pub enum ApiError {
    /// The request does not match the expected document shape.
    Schema(String),
    Domain(gridstab::Error),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::Schema(_) => "schema_error",
            ApiError::Domain(e) => e.code(),
        }
    }

    pub fn message(&self) -> String {
        match self {
            ApiError::Schema(m) => m.clone(),
            ApiError::Domain(e) => e.to_string(),
        }
    }

    pub fn body(&self) -> ErrorDoc {
        ErrorDoc { error: ErrorBody { code: self.code().into(), message: self.message() } }
    }
}

impl From<gridstab::Error> for ApiError {
    fn from(e: gridstab::Error) -> Self {
        ApiError::Domain(e)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code(), self.message())
    }
}

impl std::error::Error for ApiError {}

pub type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDoc {
    pub error: ErrorBody,
}

pub fn parse<T: DeserializeOwned>(bytes: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::Schema(e.to_string()))
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("response documents serialize");
    s.push('\n');
    s
}

/// What a request may fall back on: the feeder loaded by the service (or
/// given with `--feeder`) and the directory relative feeder paths resolve
/// against.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub feeder: Option<Arc<Feeder>>,
    pub base_dir: Option<PathBuf>,
}

impl Context {
    pub fn with_feeder(feeder: Feeder) -> Context {
        Context { feeder: Some(Arc::new(feeder)), base_dir: None }
    }

    fn resolve(&self, r: Option<FeederRef>) -> ApiResult<Arc<Feeder>> {
        match r {
            Some(r) => Ok(Arc::new(r.resolve(self.base_dir.as_deref())?)),
            None => self.feeder.clone().ok_or_else(|| ApiError::Schema("request names no feeder".into())),
        }
    }
}

// ---------------------------------------------------------------- systems

/// A closed loop with a scalar gain: either a two-bus family or a
/// configuration on a feeder whose base gains are scaled by `a`.
#[derive(Debug, Clone)]
pub enum SystemSpec {
    Family(TwoBusFamily),
    Feeder(FeederSystem),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederSystem {
    #[serde(default)]
    pub feeder: Option<FeederRef>,
    pub kind: ControlKind,
    pub config: Configuration,
    /// Gains at `a = 1`; the scalar-gain convention when absent.
    #[serde(default)]
    pub gains: Option<GainSet>,
}

impl<'de> Deserialize<'de> for SystemSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        if v.get("family").is_some() {
            serde_json::from_value(v).map(SystemSpec::Family).map_err(D::Error::custom)
        } else {
            serde_json::from_value(v).map(SystemSpec::Feeder).map_err(D::Error::custom)
        }
    }
}

struct Prepared {
    label: String,
    kind: ControlKind,
    build: Box<dyn Fn(f64) -> gridstab::Result<ClosedLoopSystem> + Send + Sync>,
}

fn prepare(ctx: &Context, spec: SystemSpec) -> ApiResult<Prepared> {
    match spec {
        SystemSpec::Family(fam) => {
            fam.system(1.0)?;
            Ok(Prepared { label: fam.name().into(), kind: fam.kind(), build: Box::new(move |a| fam.system(a)) })
        }
        SystemSpec::Feeder(fs) => {
            let feeder = ctx.resolve(fs.feeder)?;
            let sens = build_sensitivity(&feeder);
            let kind = fs.kind;
            let cfg = fs.config;
            let base = fs.gains.unwrap_or_else(|| GainSet::uniform(&cfg, kind, 1.0));
            base.to_matrix(&sens, &cfg, kind)?;
            let build = move |a: f64| {
                let g = base.scaled(a).to_matrix(&sens, &cfg, kind)?;
                build_system(kind, &sens, &cfg, &g)
            };
            Ok(Prepared { label: "feeder".into(), kind, build: Box::new(build) })
        }
    }
}

// ---------------------------------------------------------------- acrit

#[derive(Debug, Clone, Deserialize)]
pub struct AcritRequest {
    #[serde(flatten)]
    pub system: SystemSpec,
    #[serde(default)]
    pub method: Option<AcritMethod>,
    #[serde(default)]
    pub bisect: Option<BisectOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcritResponse {
    pub family: String,
    pub kind: ControlKind,
    pub a_crit: f64,
    pub method: AcritMethod,
    pub bracket: (f64, f64),
    pub tol: f64,
}

/// Bisection unless `analytic` is asked for, which only two-bus families
/// support.
pub fn acrit(ctx: &Context, req: AcritRequest) -> ApiResult<AcritResponse> {
    let opts = req.bisect.unwrap_or_default();
    let (label, kind, cg): (String, ControlKind, CriticalGain) = match (req.method, req.system) {
        (Some(AcritMethod::Analytic), SystemSpec::Family(fam)) => {
            (fam.name().into(), fam.kind(), stability::analytic_acrit(fam)?)
        }
        (Some(AcritMethod::Analytic), SystemSpec::Feeder(_)) => {
            return Err(gridstab::Error::InvalidArgument("analytic critical gains exist only for two-bus families".into()).into())
        }
        (_, spec) => {
            let p = prepare(ctx, spec)?;
            let cg = stability::bisect_acrit(&p.build, opts)?;
            (p.label, p.kind, cg)
        }
    };
    Ok(AcritResponse { family: label, kind, a_crit: cg.a_crit, method: cg.method, bracket: cg.bracket, tol: cg.tol })
}

// ---------------------------------------------------------------- sweep

/// Gain grid: an explicit list or `start:step:stop` inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct GainGrid(pub Vec<f64>);

const MAX_GRID: usize = 1_000_000;

impl std::str::FromStr for GainGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad gain range `{s}`: {e}")))
            .collect::<Result<_, _>>()?;
        let [start, step, stop] = parts[..] else {
            return Err(format!("gain range must look like start:step:stop, got `{s}`"));
        };
        if !(step > 0.0 && stop >= start && start.is_finite() && stop.is_finite()) {
            return Err(format!("gain range `{s}` needs step > 0 and stop >= start"));
        }
        // tolerate the rounding in e.g. 0:0.1:20
        let n = ((stop - start) / step * (1.0 + 1e-12)).floor() as usize + 1;
        if n > MAX_GRID {
            return Err(format!("gain range `{s}` has more than {MAX_GRID} points"));
        }
        Ok(GainGrid((0..n).map(|i| start + i as f64 * step).collect()))
    }
}

impl<'de> Deserialize<'de> for GainGrid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Doc {
            List(Vec<f64>),
            Range(String),
        }
        match Doc::deserialize(d)? {
            Doc::List(v) => Ok(GainGrid(v)),
            Doc::Range(s) => s.parse().map_err(D::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct SweepRequest {
    #[serde(flatten)]
    pub system: SystemSpec,
    pub a: GainGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResponse {
    pub family: String,
    pub kind: ControlKind,
    pub points: Vec<SweepPoint>,
}

pub fn sweep(ctx: &Context, req: SweepRequest) -> ApiResult<SweepResponse> {
    let p = prepare(ctx, req.system)?;
    let points = stability::gain_sweep(&p.build, &req.a.0)?;
    Ok(SweepResponse { family: p.label, kind: p.kind, points })
}

pub fn sweep_csv(r: &SweepResponse) -> String {
    stability::sweep_csv(&r.points)
}

// ---------------------------------------------------------------- simulate

pub type SimulateRequest = ScenarioDoc;

pub fn simulate(ctx: &Context, req: SimulateRequest) -> ApiResult<Trajectory> {
    let scn = req.into_scenario(ctx.base_dir.as_deref())?;
    Ok(sim::run(&scn)?)
}

// ---------------------------------------------------------------- heatmap

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapRequest {
    #[serde(default)]
    pub feeder: Option<FeederRef>,
    pub kind: ControlKind,
    #[serde(default)]
    pub config: Configuration,
    pub sampling: SamplingSpec,
    /// Service only: answer with a job id instead of waiting.
    #[serde(default, rename = "async")]
    pub run_async: bool,
}

pub fn heatmap(ctx: &Context, req: HeatmapRequest) -> ApiResult<HeatmapResult> {
    let feeder = ctx.resolve(req.feeder)?;
    Ok(placement::cpp(&feeder, &req.config, req.kind, &req.sampling)?)
}

// ---------------------------------------------------------------- feeder view

/// Per-phase ratios and lengths of a line or of a node's substation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub d: PhaseTriple,
    pub cx: PhaseTriple,
    pub cr: PhaseTriple,
    pub l1: PhaseTriple,
    pub l2: f64,
}

impl From<LineMetrics> for MetricsDoc {
    fn from(m: LineMetrics) -> Self {
        MetricsDoc { d: m.rx_ratios, cx: m.phase_ratios_x, cr: m.phase_ratios_r, l1: m.length_l1, l2: m.length_l2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub id: String,
    pub phases: PhaseSet,
    pub parent: Option<String>,
    pub depth: usize,
    pub path: Option<MetricsDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineView {
    pub id: String,
    pub from: String,
    pub to: String,
    pub phases: PhaseSet,
    pub metrics: MetricsDoc,
}

/// Topology and metrics for rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederView {
    pub substation: String,
    pub base_kv: f64,
    pub base_mva: f64,
    pub nodes: Vec<NodeView>,
    pub lines: Vec<LineView>,
}

pub fn feeder_view(f: &Feeder) -> ApiResult<FeederView> {
    let parent_of = |id: &str| f.lines().iter().find(|l| l.to == id).map(|l| l.from.clone());
    let nodes = f
        .nodes()
        .iter()
        .map(|n| {
            let sub = n.id == f.substation();
            Ok(NodeView {
                id: n.id.clone(),
                phases: n.phases,
                parent: parent_of(&n.id),
                depth: f.depth(&n.id)?,
                path: if sub { None } else { Some(path_metrics(f, &n.id)?.into()) },
            })
        })
        .collect::<gridstab::Result<Vec<_>>>()?;
    let lines = f
        .lines()
        .iter()
        .map(|l| LineView {
            id: l.id(),
            from: l.from.clone(),
            to: l.to.clone(),
            phases: l.z.phases(),
            metrics: LineMetrics::of(&l.z).into(),
        })
        .collect();
    Ok(FeederView {
        substation: f.substation().into(),
        base_kv: f.base_kv(),
        base_mva: f.base_mva(),
        nodes,
        lines,
    })
}

// ---------------------------------------------------------------- experiments

#[derive(Debug, Clone)]
pub struct Table1Request {
    pub kinds: Vec<ControlKind>,
    pub ratios: Vec<RatioKind>,
    pub ms: Vec<usize>,
    pub factor: f64,
    pub trials: usize,
    pub spec: SamplingSpec,
    pub budget: usize,
}

/// One row per (kind, ratio, m); cells without any good configuration
/// within the budget come out as `N/A`.
pub fn table1_csv(feeder: &Feeder, req: &Table1Request) -> ApiResult<String> {
    req.spec.validate()?;
    let mut rows = Vec::new();
    for &kind in &req.kinds {
        for &ratio in &req.ratios {
            for &m in &req.ms {
                let opts = CrossApplyOptions {
                    kind,
                    m,
                    ratio,
                    factor: req.factor,
                    trials: req.trials,
                    spec: req.spec.clone(),
                    budget: req.budget,
                };
                match placement::cross_apply_experiment(feeder, &opts) {
                    Ok(r) => rows.push(Ok(r)),
                    Err(e @ gridstab::Error::NoGoodConfigurationFound { .. }) => {
                        rows.push(Err((kind, ratio, m, e.to_string())))
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    Ok(placement::cross_apply_csv(&rows))
}

#[derive(Debug, Clone)]
pub struct BranchCompareRequest {
    pub chi1: Configuration,
    pub chi2: Configuration,
    pub kinds: Vec<ControlKind>,
    pub spec: SamplingSpec,
}

pub fn branch_compare(feeder: &Feeder, req: &BranchCompareRequest) -> ApiResult<Vec<(ControlKind, &'static str, HeatmapResult)>> {
    let mut out = Vec::new();
    for &kind in &req.kinds {
        for (label, cfg) in [("chi1", &req.chi1), ("chi2", &req.chi2)] {
            out.push((kind, label, placement::cpp(feeder, cfg, kind, &req.spec)?));
        }
    }
    Ok(out)
}

pub fn branch_compare_csv(rows: &[(ControlKind, &'static str, HeatmapResult)]) -> String {
    let mut out = String::from("kind,config,blue,yellow,red\n");
    for (kind, label, r) in rows {
        let c = r.counts;
        out.push_str(&format!("{},{label},{},{},{}\n", placement::kind_name(*kind), c.blue, c.yellow, c.red));
    }
    out
}
