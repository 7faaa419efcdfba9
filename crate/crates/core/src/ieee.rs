//! Converter from IEEE test-feeder tables (line segments, line
//! configurations in ohm/mile, switches) to the feeder file format.
//!
//! Closed switches become short three-phase lines, open switches are
//! dropped together with anything only they connect. Regulators are
//! treated as ideal, so the segment they sit on is kept as a plain line.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::feeder::{block_to_array, FeederFile, ImpedanceBlock, LineRecord, NodeRecord, PhaseSet};

const FEET_PER_MILE: f64 = 5280.0;
/// Series impedance given to closed switches, ohm per phase. Purely
/// reactive so that switches do not register as high R/X paths.
pub const SWITCH_OHMS: Complex64 = Complex64::new(0.0, 1e-3);

#[derive(Debug, Deserialize)]
struct SegmentRow {
    node_a: String,
    node_b: String,
    length_ft: f64,
    config: String,
}

#[derive(Debug, Deserialize)]
struct ConfigRow {
    config: String,
    phases: PhaseSet,
    r_aa: f64,
    x_aa: f64,
    r_ab: f64,
    x_ab: f64,
    r_ac: f64,
    x_ac: f64,
    r_bb: f64,
    x_bb: f64,
    r_bc: f64,
    x_bc: f64,
    r_cc: f64,
    x_cc: f64,
}

impl ConfigRow {
    fn block(&self) -> ImpedanceBlock {
        let c = Complex64::new;
        let (aa, ab, ac) = (c(self.r_aa, self.x_aa), c(self.r_ab, self.x_ab), c(self.r_ac, self.x_ac));
        let (bb, bc, cc) = (c(self.r_bb, self.x_bb), c(self.r_bc, self.x_bc), c(self.r_cc, self.x_cc));
        ImpedanceBlock::new(aa, ab, ac, ab, bb, bc, ac, bc, cc)
    }
}

#[derive(Debug, Deserialize)]
struct SwitchRow {
    node_a: String,
    node_b: String,
    status: String,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Parse(format!("{}: {e}", path.display()))))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ConvertOptions {
    pub substation: String,
    pub base_kv: f64,
    pub base_mva: f64,
    /// Prefix added to the raw bus numbers.
    pub prefix: String,
}

impl Default for ConvertOptions {
    fn default() -> Self {
        ConvertOptions { substation: "150".into(), base_kv: 4.16, base_mva: 2.0, prefix: "node_".into() }
    }
}

/// Reads `lines.csv`, `configs.csv` and `switches.csv` from `dir`.
pub fn convert_dir(dir: impl AsRef<Path>, opts: &ConvertOptions) -> Result<FeederFile> {
    let dir = dir.as_ref();
    let segments: Vec<SegmentRow> = read_csv(&dir.join("lines.csv"))?;
    let configs: Vec<ConfigRow> = read_csv(&dir.join("configs.csv"))?;
    let switches: Vec<SwitchRow> = read_csv(&dir.join("switches.csv"))?;
    convert(&segments, &configs, &switches, opts)
}

fn convert(segments: &[SegmentRow], configs: &[ConfigRow], switches: &[SwitchRow], opts: &ConvertOptions) -> Result<FeederFile> {
    if !(opts.base_kv > 0.0 && opts.base_mva > 0.0) {
        return Err(Error::InvalidArgument("bases must be positive".into()));
    }
    let z_base = opts.base_kv * opts.base_kv / opts.base_mva;
    let configs: BTreeMap<&str, &ConfigRow> = configs.iter().map(|c| (c.config.as_str(), c)).collect();

    let mut edges: Vec<(String, String, ImpedanceBlock, PhaseSet)> = Vec::new();
    for s in segments {
        let cfg = configs
            .get(s.config.as_str())
            .ok_or_else(|| Error::Parse(format!("segment {}-{} uses unknown config {}", s.node_a, s.node_b, s.config)))?;
        if !(s.length_ft > 0.0) {
            return Err(Error::Parse(format!("segment {}-{} has non-positive length", s.node_a, s.node_b)));
        }
        let z = cfg.block() * Complex64::new(s.length_ft / FEET_PER_MILE / z_base, 0.0);
        edges.push((s.node_a.clone(), s.node_b.clone(), z, cfg.phases));
    }
    for sw in switches {
        match sw.status.as_str() {
            "closed" => {
                let z = ImpedanceBlock::from_diagonal_element(SWITCH_OHMS / z_base);
                edges.push((sw.node_a.clone(), sw.node_b.clone(), z, PhaseSet::ABC));
            }
            "open" => {}
            other => return Err(Error::Parse(format!("switch {}-{} has status `{other}`", sw.node_a, sw.node_b))),
        }
    }

    // nodes take the union of the phases of the lines they touch
    let mut phases: BTreeMap<&str, u8> = BTreeMap::new();
    for (a, b, _, ph) in &edges {
        *phases.entry(a).or_default() |= ph.bits();
        *phases.entry(b).or_default() |= ph.bits();
    }
    if !phases.contains_key(opts.substation.as_str()) {
        return Err(Error::Topology(format!("substation {} not found", opts.substation)));
    }
    let id = |n: &str| format!("{}{n}", opts.prefix);
    let nodes = phases
        .iter()
        .map(|(n, bits)| NodeRecord { id: id(n), phases: PhaseSet::from_bits(*bits).expect("non-empty") })
        .collect();
    let lines = edges
        .iter()
        .map(|(a, b, z, _)| LineRecord { from: id(a), to: id(b), z: block_to_array(z) })
        .collect();
    let file = FeederFile {
        base_kv: opts.base_kv,
        base_mva: opts.base_mva,
        substation: id(&opts.substation),
        nodes,
        lines,
    };
    // validate before handing out
    file.clone().into_feeder()?;
    Ok(file)
}
