//! Placement tools: gain sampling, the co-located placement process (CPP)
//! heatmap, the original-versus-modified cross-application experiment and
//! path-metric branch ranking.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{build_system, Apnp, ApnpGains, Configuration, ControlKind, GainMatrix, GainSet};
use crate::error::{Error, Result};
use crate::feeder::{build_sensitivity, Feeder, SensitivityMatrices};
use crate::metrics::{path_metrics, scale_feeder_ratios, RatioKind};
use crate::stability::is_good;

/// Fraction of good samples at or above which a candidate is blue.
pub const BLUE_FRACTION: f64 = 0.07;
pub const DEFAULT_SEARCH_BUDGET: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    #[default]
    LogUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    pub num_samples: usize,
    pub gain_range: (f64, f64),
    #[serde(default)]
    pub distribution: Distribution,
    pub seed: u64,
    /// PBC only: `F22 = 2 F11` instead of an independent draw.
    #[serde(default = "yes")]
    pub tie_pbc_channels: bool,
    /// One gain per APNP and channel instead of one per phase.
    #[serde(default)]
    pub per_node: bool,
}

fn yes() -> bool {
    true
}

impl SamplingSpec {
    pub fn new(num_samples: usize, gain_range: (f64, f64), seed: u64) -> SamplingSpec {
        SamplingSpec {
            num_samples,
            gain_range,
            distribution: Distribution::LogUniform,
            seed,
            tie_pbc_channels: true,
            per_node: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.gain_range;
        if self.num_samples < 1 {
            return Err(Error::InvalidArgument("num_samples must be at least 1".into()));
        }
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("gain range must satisfy 0 < min <= max, got ({lo}, {hi})")));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let (lo, hi) = self.gain_range;
        let u: f64 = rng.random();
        if lo == hi {
            lo
        } else {
            (lo.ln() + u * (hi.ln() - lo.ln())).exp()
        }
    }
}

/// FNV-1a over the labels, used as a ChaCha stream id so that results do
/// not depend on evaluation order.
fn stream_id(labels: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for l in labels {
        for b in l.iter().chain(std::iter::once(&0xff)) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn rng_for(seed: u64, labels: &[&[u8]]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(labels));
    rng
}

/// Draws `spec.num_samples` gain sets for a configuration with `n_apnps`
/// pairs from `rng`. The stream is consumed sample by sample, so a larger
/// sample count extends a smaller one.
pub fn sample_gain_sets(spec: &SamplingSpec, n_apnps: usize, kind: ControlKind, rng: &mut ChaCha8Rng) -> Vec<GainSet> {
    (0..spec.num_samples)
        .map(|_| {
            GainSet(
                (0..n_apnps)
                    .map(|_| {
                        let draw3 = |rng: &mut ChaCha8Rng| -> [f64; 3] {
                            if spec.per_node {
                                [spec.draw(rng); 3]
                            } else {
                                std::array::from_fn(|_| spec.draw(rng))
                            }
                        };
                        let q = draw3(rng);
                        let p = match kind {
                            ControlKind::Pbc if spec.tie_pbc_channels => q.map(|v| 2.0 * v),
                            _ => draw3(rng),
                        };
                        ApnpGains { q, p }
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Deterministic gain matrices for `cfg` seeded by `spec.seed`.
pub fn sample_gains(
    spec: &SamplingSpec,
    sens: &SensitivityMatrices,
    cfg: &Configuration,
    kind: ControlKind,
) -> Result<Vec<GainMatrix>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    sample_gain_sets(spec, cfg.len(), kind, &mut rng).iter().map(|g| g.to_matrix(sens, cfg, kind)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestGains {
    pub rho: f64,
    pub gains: GainSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub good: usize,
    pub total: usize,
    /// Good sample with the smallest spectral radius.
    pub best: Option<BestGains>,
}

/// Scores every gain set on `cfg`. Sensitivities are restricted to the
/// configuration's nodes, which leaves the active spectrum unchanged.
pub fn evaluate_configuration(
    sens: &SensitivityMatrices,
    cfg: &Configuration,
    kind: ControlKind,
    samples: &[GainSet],
) -> Result<Evaluation> {
    let local = sens.restrict(&cfg.nodes())?;
    let mut good = 0;
    let mut best: Option<BestGains> = None;
    for g in samples {
        let sys = build_system(kind, &local, cfg, &g.to_matrix(&local, cfg, kind)?)?;
        let verdict = is_good(&sys)?;
        if verdict.good {
            good += 1;
            if best.as_ref().is_none_or(|b| verdict.spectral_radius < b.rho) {
                best = Some(BestGains { rho: verdict.spectral_radius, gains: g.clone() });
            }
        }
    }
    Ok(Evaluation { good, total: samples.len(), best })
}

/// Goodness of a fixed gain set on `cfg`.
pub fn check_gains(sens: &SensitivityMatrices, cfg: &Configuration, kind: ControlKind, gains: &GainSet) -> Result<bool> {
    let local = sens.restrict(&cfg.nodes())?;
    let sys = build_system(kind, &local, cfg, &gains.to_matrix(&local, cfg, kind)?)?;
    Ok(is_good(&sys)?.good)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Blue,
    Yellow,
    Red,
}

impl Color {
    pub fn of_fraction(good_fraction: f64) -> Color {
        if good_fraction >= BLUE_FRACTION {
            Color::Blue
        } else if good_fraction > 0.0 {
            Color::Yellow
        } else {
            Color::Red
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeVerdict {
    pub node: String,
    pub color: Color,
    pub good_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<BestGains>,
    /// Set when the candidate could not be evaluated; the node is then red.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorCounts {
    pub blue: usize,
    pub yellow: usize,
    pub red: usize,
}

impl ColorCounts {
    pub fn of(verdicts: &[NodeVerdict]) -> ColorCounts {
        let mut c = ColorCounts::default();
        for v in verdicts {
            match v.color {
                Color::Blue => c.blue += 1,
                Color::Yellow => c.yellow += 1,
                Color::Red => c.red += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapResult {
    pub config: Configuration,
    pub kind: ControlKind,
    pub verdicts: Vec<NodeVerdict>,
    pub counts: ColorCounts,
}

/// Co-located placement process: every node not yet used by `base` is
/// tried as the next co-located pair and colored by the fraction of sampled
/// gains that make the extended configuration good.
pub fn cpp(feeder: &Feeder, base: &Configuration, kind: ControlKind, spec: &SamplingSpec) -> Result<HeatmapResult> {
    spec.validate()?;
    let sens = build_sensitivity(feeder);
    base.resolve(&sens)?;
    let mut candidates: Vec<&String> = sens.nodes().iter().filter(|n| !base.occupies(n)).collect();
    candidates.sort();
    let verdicts: Vec<NodeVerdict> = candidates
        .par_iter()
        .map(|node| {
            let cfg = base.with(Apnp::co_located(node.as_str()));
            let mut rng = rng_for(spec.seed, &[node.as_bytes()]);
            let samples = sample_gain_sets(spec, cfg.len(), kind, &mut rng);
            match evaluate_configuration(&sens, &cfg, kind, &samples) {
                Ok(ev) => {
                    let good_fraction = ev.good as f64 / ev.total as f64;
                    NodeVerdict {
                        node: node.to_string(),
                        color: Color::of_fraction(good_fraction),
                        good_fraction,
                        best: ev.best,
                        error: None,
                    }
                }
                Err(e) => NodeVerdict {
                    node: node.to_string(),
                    color: Color::Red,
                    good_fraction: 0.0,
                    best: None,
                    error: Some(format!("{}: {e}", e.code())),
                },
            }
        })
        .collect();
    let counts = ColorCounts::of(&verdicts);
    Ok(HeatmapResult { config: base.clone(), kind, verdicts, counts })
}

#[derive(Debug, Clone)]
pub struct GoodConfiguration {
    pub config: Configuration,
    pub best: BestGains,
    pub attempts: usize,
}

/// Draws random co-located `m`-node configurations until one admits a good
/// sampled gain set, or the budget runs out.
pub fn find_good_configuration(
    sens: &SensitivityMatrices,
    kind: ControlKind,
    m: usize,
    spec: &SamplingSpec,
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GoodConfiguration> {
    let pool = sens.nodes();
    if m == 0 || m > pool.len() {
        return Err(Error::InvalidArgument(format!("m = {m} with {} candidate nodes", pool.len())));
    }
    for attempt in 1..=budget {
        let mut picks: Vec<usize> = index::sample(rng, pool.len(), m).into_vec();
        picks.sort_unstable();
        let cfg = Configuration::co_located(picks.iter().map(|&i| pool[i].clone()));
        let samples = sample_gain_sets(spec, m, kind, rng);
        let ev = evaluate_configuration(sens, &cfg, kind, &samples)?;
        if let Some(best) = ev.best {
            return Ok(GoodConfiguration { config: cfg, best, attempts: attempt });
        }
    }
    Err(Error::NoGoodConfigurationFound { attempts: budget })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossApplyResult {
    pub kind: ControlKind,
    pub ratio: RatioKind,
    pub m: usize,
    pub factor: f64,
    pub trials: usize,
    pub support: usize,
    pub contradict: usize,
    pub inconclusive: usize,
    /// Best gains found on the original feeder that are no longer good on
    /// the modified one.
    pub lost_forward: usize,
    /// Best gains found on the modified feeder that are no longer good on
    /// the original one.
    pub lost_reverse: usize,
}

impl CrossApplyResult {
    /// Share of decisive trials that support, in percent.
    pub fn support_pct(&self) -> Option<f64> {
        let decisive = self.support + self.contradict;
        (decisive > 0).then(|| 100.0 * self.support as f64 / decisive as f64)
    }
}

#[derive(Debug, Clone)]
pub struct CrossApplyOptions {
    pub kind: ControlKind,
    pub m: usize,
    pub ratio: RatioKind,
    pub factor: f64,
    pub trials: usize,
    pub spec: SamplingSpec,
    pub budget: usize,
}

/// Each trial finds a good configuration on the original feeder and
/// applies its best gains to the modified one, then does the same in
/// reverse. Losing goodness only in the forward direction supports the
/// claim that higher ratios shrink the stabilizing gain range; losing it
/// only in reverse contradicts it.
pub fn cross_apply_experiment(feeder: &Feeder, opts: &CrossApplyOptions) -> Result<CrossApplyResult> {
    opts.spec.validate()?;
    let modified = scale_feeder_ratios(feeder, opts.ratio, opts.factor)?.feeder;
    let orig = build_sensitivity(feeder);
    let scaled = build_sensitivity(&modified);

    let outcomes = (0..opts.trials)
        .into_par_iter()
        .map(|t| {
            let tb = (t as u64).to_le_bytes();
            let mut fwd_rng = rng_for(opts.spec.seed, &[b"forward", &tb]);
            let mut rev_rng = rng_for(opts.spec.seed, &[b"reverse", &tb]);
            let fwd = find_good_configuration(&orig, opts.kind, opts.m, &opts.spec, opts.budget, &mut fwd_rng)?;
            let rev = find_good_configuration(&scaled, opts.kind, opts.m, &opts.spec, opts.budget, &mut rev_rng)?;
            let lost_fwd = !check_gains(&scaled, &fwd.config, opts.kind, &fwd.best.gains)?;
            let lost_rev = !check_gains(&orig, &rev.config, opts.kind, &rev.best.gains)?;
            Ok((lost_fwd, lost_rev))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut res = CrossApplyResult {
        kind: opts.kind,
        ratio: opts.ratio,
        m: opts.m,
        factor: opts.factor,
        trials: opts.trials,
        support: 0,
        contradict: 0,
        inconclusive: 0,
        lost_forward: 0,
        lost_reverse: 0,
    };
    for (f, r) in outcomes {
        res.lost_forward += f as usize;
        res.lost_reverse += r as usize;
        match (f, r) {
            (true, false) => res.support += 1,
            (false, true) => res.contradict += 1,
            _ => res.inconclusive += 1,
        }
    }
    Ok(res)
}

pub fn cross_apply_csv(rows: &[std::result::Result<CrossApplyResult, (ControlKind, RatioKind, usize, String)>]) -> String {
    let mut out = String::from("kind,ratio,m,support,contradict,inconclusive,lost_forward,lost_reverse,support_pct\n");
    for row in rows {
        match row {
            Ok(r) => out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                kind_name(r.kind),
                ratio_name(r.ratio),
                r.m,
                r.support,
                r.contradict,
                r.inconclusive,
                r.lost_forward,
                r.lost_reverse,
                r.support_pct().map(|p| format!("{p:.1}")).unwrap_or_else(|| "inconc.".into())
            )),
            Err((k, ratio, m, _)) => {
                out.push_str(&format!("{},{},{m},,,,,,N/A\n", kind_name(*k), ratio_name(*ratio)))
            }
        }
    }
    out
}

pub fn kind_name(k: ControlKind) -> &'static str {
    match k {
        ControlKind::Droop => "droop",
        ControlKind::Pbc => "pbc",
    }
}

pub fn ratio_name(r: RatioKind) -> &'static str {
    match r {
        RatioKind::Rx => "rx",
        RatioKind::Phase => "phase",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchMetric {
    pub node: String,
    /// Mean over present phases of the path R/X ratio.
    pub rx: f64,
    /// Mean over present phases of the path reactive phase ratio.
    pub phase_x: f64,
    pub phase_r: f64,
}

/// Nodes ranked by the R/X ratio of their summed path impedance, highest
/// first; ties fall back to the phase ratio and then the node id.
pub fn branch_metrics_ranking(feeder: &Feeder) -> Result<Vec<BranchMetric>> {
    let mean = |t: [Option<f64>; 3]| {
        let v: Vec<f64> = t.iter().flatten().copied().collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let mut out = feeder
        .load_nodes()
        .map(|n| {
            let m = path_metrics(feeder, &n.id)?;
            Ok(BranchMetric {
                node: n.id.clone(),
                rx: mean(m.rx_ratios),
                phase_x: mean(m.phase_ratios_x),
                phase_r: mean(m.phase_ratios_r),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.rx.total_cmp(&a.rx).then(b.phase_x.total_cmp(&a.phase_x)).then(a.node.cmp(&b.node)));
    Ok(out)
}
