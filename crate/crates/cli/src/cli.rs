use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridstab::control::Configuration;
use gridstab::ieee::{self, ConvertOptions};
use gridstab::metrics::{metrics_csv, RatioKind};
use gridstab::placement::{SamplingSpec, DEFAULT_SEARCH_BUDGET};
use gridstab::stability::{AcritMethod, TwoBusFamily};
use gridstab::{feeder::load_feeder, fixtures, ControlKind, Feeder};
use serde_json::{json, Map, Value};

use crate::api::{self, ApiError, Context};
use crate::server::{self, AppState, DEFAULT_PORT};

/// Stability analysis of inverter voltage control on distribution feeders.
#[derive(Debug, Parser)]
#[command(name = "gridstab", version)]
pub struct Cli {
    /// Write the result to this file instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-line and per-path impedance metrics as CSV.
    Metrics {
        #[arg(long)]
        feeder: PathBuf,
    },
    /// Critical gain of a two-bus family or of a configuration on a feeder.
    Acrit(AcritArgs),
    /// Spectral radius over a grid of gain scales.
    Sweep(SweepArgs),
    /// Quasi-static simulation of a scenario file.
    Simulate(SimulateArgs),
    /// Co-located placement heatmap as JSON.
    Heatmap(HeatmapArgs),
    /// Feeder-scale experiments.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Write the two-bus feeder of a family as a feeder file.
    Fixture(FamilyArgs),
    /// Convert IEEE test feeder tables to a feeder file.
    ConvertIeee(ConvertArgs),
    /// Run the local HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct FamilyArgs {
    /// pbc_1ph, droop_1ph, pbc_rx, droop_rx, pbc_phase or droop_phase.
    #[arg(long)]
    pub family: Option<String>,
    /// Reactance of the single-phase families.
    #[arg(long)]
    pub x: Option<f64>,
    /// R/X ratio.
    #[arg(long)]
    pub d: Option<f64>,
    /// Per-phase impedance magnitude.
    #[arg(long)]
    pub l1: Option<f64>,
    /// Reactive phase ratio.
    #[arg(long)]
    pub cx: Option<f64>,
    /// Spectral norm of the impedance block.
    #[arg(long)]
    pub l2: Option<f64>,
}

impl FamilyArgs {
    fn doc(&self) -> Option<Map<String, Value>> {
        let family = self.family.as_ref()?;
        let mut m = Map::new();
        m.insert("family".into(), json!(family));
        for (k, v) in [("x", self.x), ("d", self.d), ("l1", self.l1), ("cx", self.cx), ("l2", self.l2)] {
            if let Some(v) = v {
                m.insert(k.into(), json!(v));
            }
        }
        Some(m)
    }
}

#[derive(Debug, Args)]
pub struct SystemArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Feeder file, for a configuration instead of a family.
    #[arg(long, conflicts_with = "family")]
    pub feeder: Option<PathBuf>,
    #[arg(long, requires = "feeder")]
    pub kind: Option<ControlKind>,
    /// Co-located pairs, comma separated.
    #[arg(long, value_delimiter = ',', requires = "feeder")]
    pub nodes: Vec<String>,
    /// Full request document (JSON); replaces the flags above.
    #[arg(long, conflicts_with_all = ["family", "feeder"])]
    pub request: Option<PathBuf>,
}

impl SystemArgs {
    /// Request document and the directory its relative paths refer to.
    fn doc(&self) -> Result<(Map<String, Value>, Option<PathBuf>), ApiError> {
        if let Some(path) = &self.request {
            let text = read(path)?;
            let v: Value = api::parse(text.as_bytes())?;
            let Value::Object(m) = v else {
                return Err(ApiError::Schema(format!("{}: request must be a JSON object", path.display())));
            };
            return Ok((m, path.parent().map(Path::to_path_buf)));
        }
        if let Some(m) = self.family.doc() {
            return Ok((m, None));
        }
        let feeder = self
            .feeder
            .as_ref()
            .ok_or_else(|| ApiError::Schema("give --family, --feeder or --request".into()))?;
        let kind = self.kind.ok_or_else(|| ApiError::Schema("--feeder needs --kind".into()))?;
        let mut m = Map::new();
        m.insert("feeder".into(), json!(feeder));
        m.insert("kind".into(), json!(kind));
        m.insert("config".into(), json!(Configuration::co_located(self.nodes.iter().cloned())));
        Ok((m, None))
    }
}

#[derive(Debug, Args)]
pub struct AcritArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Lower end of the bisection bracket.
    #[arg(long)]
    pub lo: Option<f64>,
    #[arg(long)]
    pub hi: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Analytic,
    Bisection,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Gain grid as start:step:stop (inclusive).
    #[arg(long)]
    pub a: Option<String>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file (JSON).
    pub scenario: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    /// Gain samples per candidate node.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long)]
    pub seed: u64,
    /// Log-uniform gain range as lo:hi.
    #[arg(long, default_value = "0.01:100")]
    pub gain_range: String,
    /// Draw the PBC angle gains independently of the magnitude gains.
    #[arg(long)]
    pub untie_pbc: bool,
    /// One gain per pair and channel instead of one per phase.
    #[arg(long)]
    pub per_node: bool,
}

impl SamplingArgs {
    fn spec(&self) -> Result<SamplingSpec, ApiError> {
        let range = self
            .gain_range
            .split_once(':')
            .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)))
            .ok_or_else(|| ApiError::Schema(format!("gain range must look like lo:hi, got `{}`", self.gain_range)))?;
        let mut spec = SamplingSpec::new(self.samples, range, self.seed);
        spec.tie_pbc_channels = !self.untie_pbc;
        spec.per_node = self.per_node;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// Full request document (JSON); replaces the other flags.
    #[arg(long, exclusive = true)]
    pub request: Option<PathBuf>,
    #[arg(long, required_unless_present = "request")]
    pub feeder: Option<PathBuf>,
    #[arg(long, required_unless_present = "request")]
    pub kind: Option<ControlKind>,
    /// Pairs already placed, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub nodes: Vec<String>,
    #[arg(long, required_unless_present = "request")]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value = "0.01:100")]
    pub gain_range: String,
    #[arg(long)]
    pub untie_pbc: bool,
    #[arg(long)]
    pub per_node: bool,
}

#[derive(Debug, Subcommand)]
pub enum Experiment {
    /// Cross-application of best gains between a feeder and its
    /// ratio-scaled copy; CSV tallies per control, ratio and m.
    Table1(Table1Args),
    /// Heatmap color counts for two base configurations.
    BranchCompare(BranchArgs),
}

#[derive(Debug, Args)]
pub struct Table1Args {
    #[arg(long, default_value = "data/ieee123.json")]
    pub feeder: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "pbc,droop")]
    pub kinds: Vec<ControlKind>,
    #[arg(long, value_delimiter = ',', default_value = "rx,phase")]
    pub ratios: Vec<RatioKind>,
    /// Configuration sizes.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,15")]
    pub m: Vec<usize>,
    #[arg(long, default_value_t = 1.5)]
    pub factor: f64,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Random configurations tried before giving up on a cell.
    #[arg(long, default_value_t = DEFAULT_SEARCH_BUDGET)]
    pub budget: usize,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct BranchArgs {
    #[arg(long, default_value = "data/ieee123.json")]
    pub feeder: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "node_8,node_53,node_57,node_66")]
    pub chi1: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "node_8,node_53,node_57,node_74")]
    pub chi2: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "pbc,droop")]
    pub kinds: Vec<ControlKind>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Directory holding lines.csv, configs.csv and switches.csv.
    pub dir: PathBuf,
    #[arg(long, default_value_t = ConvertOptions::default().base_mva)]
    pub base_mva: f64,
    #[arg(long, default_value_t = ConvertOptions::default().base_kv)]
    pub base_kv: f64,
    #[arg(long, default_value_t = ConvertOptions::default().substation)]
    pub substation: String,
    #[arg(long, default_value_t = ConvertOptions::default().prefix)]
    pub prefix: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "GRIDSTAB_PORT", default_value_t = DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
    pub bind: IpAddr,
    /// Feeder served at /feeder and used by requests that name none;
    /// defaults to the two-bus R/X fixture.
    #[arg(long)]
    pub feeder: Option<PathBuf>,
    #[arg(long, default_value_t = crate::jobs::DEFAULT_JOB_CAP)]
    pub job_cap: usize,
    /// Concurrent heatmap evaluations.
    #[arg(long)]
    pub workers: Option<usize>,
}

fn read(path: &Path) -> Result<String, ApiError> {
    std::fs::read_to_string(path).map_err(|e| ApiError::Domain(gridstab::Error::Io(e)))
}

fn load(path: &Path) -> Result<Feeder, ApiError> {
    Ok(load_feeder(path)?)
}

fn parse_value<T: serde::de::DeserializeOwned>(m: Map<String, Value>) -> Result<T, ApiError> {
    serde_json::from_value(Value::Object(m)).map_err(|e| ApiError::Schema(e.to_string()))
}

/// The two-bus feeder whose sensitivity matrices realise a family.
pub fn family_feeder(fam: TwoBusFamily) -> Feeder {
    match fam {
        TwoBusFamily::Pbc1ph { x } | TwoBusFamily::Droop1ph { x } => fixtures::two_bus_1ph_feeder(x, 0.0),
        TwoBusFamily::PbcRx { d, l1 } | TwoBusFamily::DroopRx { d, l1 } => {
            fixtures::two_bus_3ph_feeder(&fixtures::rx_block(d, l1))
        }
        TwoBusFamily::PbcPhase { cx, l2 } | TwoBusFamily::DroopPhase { cx, l2 } => {
            fixtures::two_bus_3ph_feeder(&fixtures::phase_ratio_block(cx, l2))
        }
    }
}

/// Runs every subcommand except `serve` and returns what it prints.
pub fn execute(command: &Command) -> Result<String, ApiError> {
    match command {
        Command::Metrics { feeder } => Ok(metrics_csv(&load(feeder)?)?),
        Command::Acrit(a) => {
            let (mut m, base_dir) = a.system.doc()?;
            if let Some(method) = a.method {
                let method = match method {
                    MethodArg::Analytic => AcritMethod::Analytic,
                    MethodArg::Bisection => AcritMethod::Bisection,
                };
                m.insert("method".into(), json!(method));
            }
            if a.lo.is_some() || a.hi.is_some() || a.tol.is_some() {
                let mut opts = gridstab::stability::BisectOptions::default();
                opts.lo = a.lo.unwrap_or(opts.lo);
                opts.hi = a.hi.unwrap_or(opts.hi);
                opts.tol = a.tol.unwrap_or(opts.tol);
                m.insert("bisect".into(), json!(opts));
            }
            let ctx = Context { feeder: None, base_dir };
            Ok(api::to_json(&api::acrit(&ctx, parse_value(m)?)?))
        }
        Command::Sweep(s) => {
            let (mut m, base_dir) = s.system.doc()?;
            if let Some(a) = &s.a {
                m.insert("a".into(), json!(a));
            }
            let ctx = Context { feeder: None, base_dir };
            let r = api::sweep(&ctx, parse_value(m)?)?;
            Ok(match s.format {
                Format::Csv => api::sweep_csv(&r),
                Format::Json => api::to_json(&r),
            })
        }
        Command::Simulate(s) => {
            let req = api::parse(read(&s.scenario)?.as_bytes())?;
            let ctx = Context { feeder: None, base_dir: s.scenario.parent().map(Path::to_path_buf) };
            let traj = api::simulate(&ctx, req)?;
            Ok(match s.format {
                Format::Csv => traj.to_csv(),
                Format::Json => api::to_json(&traj),
            })
        }
        Command::Heatmap(h) => {
            let (req, base_dir): (api::HeatmapRequest, _) = match &h.request {
                Some(path) => (api::parse(read(path)?.as_bytes())?, path.parent().map(Path::to_path_buf)),
                None => {
                    let sampling = SamplingArgs {
                        samples: h.samples,
                        seed: h.seed.expect("required by clap"),
                        gain_range: h.gain_range.clone(),
                        untie_pbc: h.untie_pbc,
                        per_node: h.per_node,
                    }
                    .spec()?;
                    let doc = json!({
                        "feeder": h.feeder,
                        "kind": h.kind,
                        "config": Configuration::co_located(h.nodes.iter().cloned()),
                        "sampling": sampling,
                    });
                    (parse_value(doc.as_object().expect("object literal").clone())?, None)
                }
            };
            let ctx = Context { feeder: None, base_dir };
            Ok(api::to_json(&api::heatmap(&ctx, req)?))
        }
        Command::Experiment(Experiment::Table1(t)) => {
            let req = api::Table1Request {
                kinds: t.kinds.clone(),
                ratios: t.ratios.clone(),
                ms: t.m.clone(),
                factor: t.factor,
                trials: t.trials,
                spec: t.sampling.spec()?,
                budget: t.budget,
            };
            api::table1_csv(&load(&t.feeder)?, &req)
        }
        Command::Experiment(Experiment::BranchCompare(b)) => {
            let req = api::BranchCompareRequest {
                chi1: Configuration::co_located(b.chi1.iter().cloned()),
                chi2: Configuration::co_located(b.chi2.iter().cloned()),
                kinds: b.kinds.clone(),
                spec: b.sampling.spec()?,
            };
            Ok(api::branch_compare_csv(&api::branch_compare(&load(&b.feeder)?, &req)?))
        }
        Command::Fixture(f) => {
            let m = f.doc().ok_or_else(|| ApiError::Schema("--family is required".into()))?;
            let fam: TwoBusFamily = parse_value(m)?;
            fam.system(1.0)?;
            Ok(api::to_json(&family_feeder(fam).to_file()))
        }
        Command::ConvertIeee(c) => {
            let opts = ConvertOptions {
                substation: c.substation.clone(),
                base_kv: c.base_kv,
                base_mva: c.base_mva,
                prefix: c.prefix.clone(),
            };
            Ok(api::to_json(&ieee::convert_dir(&c.dir, &opts)?))
        }
        Command::Serve(_) => Err(ApiError::Schema("serve does not produce output".into())),
    }
}

fn serve(args: &ServeArgs) -> Result<(), ApiError> {
    let feeder = match &args.feeder {
        Some(p) => load(p)?,
        None => family_feeder(TwoBusFamily::PbcRx { d: 0.6, l1: 0.2 }),
    };
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(2));
    let state = AppState::new(Context::with_feeder(feeder), args.job_cap, workers);
    let addr = SocketAddr::new(args.bind, args.port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| ApiError::Domain(e.into()))?;
    rt.block_on(server::serve(addr, state)).map_err(|e| ApiError::Domain(e.into()))
}

/// Exit code convention: 0 success, 1 domain error, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Serve(s) => serve(s),
        cmd => execute(cmd).and_then(|out| match &cli.out {
            Some(path) => std::fs::write(path, out).map_err(|e| ApiError::Domain(e.into())),
            None => {
                print!("{out}");
                Ok(())
            }
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e @ ApiError::Schema(_)) => {
            eprintln!("error[{}]: {}", e.code(), e.message());
            eprintln!("run `gridstab help` for the expected arguments and documents");
            2
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.message());
            1
        }
    }
}
