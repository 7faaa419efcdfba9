//! Radial three-phase feeder model and the squared-voltage sensitivity
//! matrices built from path sums of line impedance blocks.
//!
//! Every node carries three phase slots. Absent phases keep their slot and
//! are structurally zero; a phase mask travels with the matrices so that
//! eigenvalue computations can drop them.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix3};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type ImpedanceBlock = Matrix3<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        Phase::ALL.get(i).copied()
    }

    /// Nominal balanced angle of the phase, in radians.
    pub fn nominal_angle(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -120f64.to_radians(),
            Phase::C => 120f64.to_radians(),
        }
    }

    pub fn letter(self) -> char {
        match self {
            Phase::A => 'A',
            Phase::B => 'B',
            Phase::C => 'C',
        }
    }
}

/// Non-empty subset of {A, B, C}.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);
    pub const A: PhaseSet = PhaseSet(0b001);

    pub fn from_bits(bits: u8) -> Option<PhaseSet> {
        (bits != 0 && bits & !0b111 == 0).then_some(PhaseSet(bits))
    }

    pub fn from_phases(phases: impl IntoIterator<Item = Phase>) -> Option<PhaseSet> {
        Self::from_bits(phases.into_iter().fold(0, |acc, p| acc | 1 << p.index()))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, phase: Phase) -> bool {
        self.0 & (1 << phase.index()) != 0
    }

    pub fn is_subset(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn mask(self) -> [bool; 3] {
        Phase::ALL.map(|p| self.contains(p))
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{}", p.letter())?;
        }
        Ok(())
    }
}

impl fmt::Debug for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhaseSet({self})")
    }
}

impl FromStr for PhaseSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bits = 0u8;
        for ch in s.trim().chars() {
            let bit = match ch.to_ascii_uppercase() {
                'A' => 0b001,
                'B' => 0b010,
                'C' => 0b100,
                _ => return Err(Error::Parse(format!("invalid phase letter `{ch}` in `{s}`"))),
            };
            if bits & bit != 0 {
                return Err(Error::Parse(format!("duplicate phase `{ch}` in `{s}`")));
            }
            bits |= bit;
        }
        PhaseSet::from_bits(bits).ok_or_else(|| Error::Parse("empty phase set".into()))
    }
}

impl Serialize for PhaseSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PhaseSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// 3×3 complex series impedance of a line, in per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LineImpedance {
    z: ImpedanceBlock,
    phases: PhaseSet,
}

impl LineImpedance {
    /// Validates symmetry, zero rows for absent phases and a nonzero,
    /// non-negative diagonal on every present phase.
    pub fn new(z: ImpedanceBlock, phases: PhaseSet) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                if z[(i, j)] != z[(j, i)] {
                    return Err(Error::Impedance(format!("block is not symmetric at ({i}, {j})")));
                }
                let present = phases.mask()[i] && phases.mask()[j];
                if !present && z[(i, j)] != Complex64::new(0.0, 0.0) {
                    return Err(Error::Impedance(format!(
                        "entry ({i}, {j}) touches an absent phase but is nonzero"
                    )));
                }
                if !z[(i, j)].re.is_finite() || !z[(i, j)].im.is_finite() {
                    return Err(Error::Impedance("non-finite entry".into()));
                }
            }
        }
        for p in phases.iter() {
            let d = z[(p.index(), p.index())];
            if d.re < 0.0 || d.im < 0.0 {
                return Err(Error::Impedance(format!("negative self impedance on phase {p:?}")));
            }
            if d.norm() == 0.0 {
                return Err(Error::Impedance(format!("zero self impedance on phase {p:?}")));
            }
        }
        Ok(Self { z, phases })
    }

    /// Infers the phase set from the nonzero diagonal entries.
    pub fn from_block(z: ImpedanceBlock) -> Result<Self> {
        let phases = PhaseSet::from_phases(
            Phase::ALL.into_iter().filter(|p| z[(p.index(), p.index())].norm() > 0.0),
        )
        .ok_or_else(|| Error::Impedance("all-zero impedance block".into()))?;
        Self::new(z, phases)
    }

    /// Balanced diagonal block with the same self impedance on `phases`.
    pub fn diagonal(r: f64, x: f64, phases: PhaseSet) -> Result<Self> {
        let mut z = ImpedanceBlock::zeros();
        for p in phases.iter() {
            z[(p.index(), p.index())] = Complex64::new(r, x);
        }
        Self::new(z, phases)
    }

    pub fn block(&self) -> &ImpedanceBlock {
        &self.z
    }

    pub fn phases(&self) -> PhaseSet {
        self.phases
    }

    pub fn resistance(&self) -> Matrix3<f64> {
        self.z.map(|c| c.re)
    }

    pub fn reactance(&self) -> Matrix3<f64> {
        self.z.map(|c| c.im)
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.z * Complex64::new(s, 0.0), self.phases)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub phases: PhaseSet,
}

/// A line oriented from its upstream (substation side) node to its
/// downstream node.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: String,
    pub to: String,
    pub z: LineImpedance,
}

impl Line {
    pub fn id(&self) -> String {
        format!("{}-{}", self.from, self.to)
    }
}

/// Validated radial feeder. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Feeder {
    base_kv: f64,
    base_mva: f64,
    substation: usize,
    nodes: Vec<Node>,
    lines: Vec<Line>,
    index: HashMap<String, usize>,
    // Per node: index of the line feeding it (None for the substation).
    parent_line: Vec<Option<usize>>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
}

impl Feeder {
    pub fn new(
        base_kv: f64,
        base_mva: f64,
        substation: &str,
        nodes: Vec<Node>,
        lines: Vec<Line>,
    ) -> Result<Self> {
        if !(base_kv > 0.0 && base_mva > 0.0) {
            return Err(Error::Parse("base_kv and base_mva must be positive".into()));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::Topology(format!("duplicate node id `{}`", n.id)));
            }
        }
        let sub = *index
            .get(substation)
            .ok_or_else(|| Error::Topology(format!("substation `{substation}` is not a node")))?;
        if lines.len() + 1 != nodes.len() {
            return Err(Error::Topology(format!(
                "a radial feeder with {} nodes needs {} lines, found {}",
                nodes.len(),
                nodes.len().saturating_sub(1),
                lines.len()
            )));
        }

        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes.len()];
        for (li, line) in lines.iter().enumerate() {
            let a = *index
                .get(&line.from)
                .ok_or_else(|| Error::Topology(format!("line {} references unknown node `{}`", line.id(), line.from)))?;
            let b = *index
                .get(&line.to)
                .ok_or_else(|| Error::Topology(format!("line {} references unknown node `{}`", line.id(), line.to)))?;
            if a == b {
                return Err(Error::Topology(format!("self loop at `{}`", line.from)));
            }
            adjacency[a].push((b, li));
            adjacency[b].push((a, li));
        }

        let n = nodes.len();
        let mut parent = vec![None; n];
        let mut parent_line = vec![None; n];
        let mut depth = vec![0usize; n];
        let mut seen = vec![false; n];
        seen[sub] = true;
        let mut queue = VecDeque::from([sub]);
        while let Some(u) = queue.pop_front() {
            for &(v, li) in &adjacency[u] {
                if Some(li) == parent_line[u] {
                    continue;
                }
                if seen[v] {
                    return Err(Error::Topology(format!(
                        "line {} closes a loop",
                        lines[li].id()
                    )));
                }
                seen[v] = true;
                parent[v] = Some(u);
                parent_line[v] = Some(li);
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(Error::Topology(format!(
                "node `{}` is not connected to the substation",
                nodes[orphan].id
            )));
        }

        // Orient every line upstream -> downstream and check phase nesting.
        let mut lines = lines;
        for v in 0..n {
            let (Some(li), Some(u)) = (parent_line[v], parent[v]) else { continue };
            let line = &mut lines[li];
            if line.from != nodes[u].id {
                std::mem::swap(&mut line.from, &mut line.to);
            }
            if !nodes[v].phases.is_subset(line.z.phases()) {
                return Err(Error::Phase(format!(
                    "node `{}` has phases {} but its line {} only carries {}",
                    nodes[v].id,
                    nodes[v].phases,
                    line.id(),
                    line.z.phases()
                )));
            }
            if !line.z.phases().is_subset(nodes[u].phases) {
                return Err(Error::Phase(format!(
                    "line {} carries phases {} not present at upstream node `{}` ({})",
                    line.id(),
                    line.z.phases(),
                    nodes[u].id,
                    nodes[u].phases
                )));
            }
        }

        Ok(Self { base_kv, base_mva, substation: sub, nodes, lines, index, parent_line, parent, depth })
    }

    pub fn base_kv(&self) -> f64 {
        self.base_kv
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn substation(&self) -> &str {
        &self.nodes[self.substation].id
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn node(&self, id: &str) -> Result<&Node> {
        self.index.get(id).map(|&i| &self.nodes[i]).ok_or_else(|| Error::UnknownNode(id.into()))
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Non-substation node ids in file order; this is the state ordering
    /// used by [`SensitivityMatrices`].
    pub fn load_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().enumerate().filter(move |(i, _)| *i != self.substation).map(|(_, n)| n)
    }

    pub fn depth(&self, id: &str) -> Result<usize> {
        self.index.get(id).map(|&i| self.depth[i]).ok_or_else(|| Error::UnknownNode(id.into()))
    }

    /// The unique sequence of lines from `node_id` up to the substation.
    pub fn path_to_substation(&self, node_id: &str) -> Result<Vec<&Line>> {
        Ok(self.path_line_indices(node_id)?.into_iter().map(|li| &self.lines[li]).collect())
    }

    pub fn path_line_indices(&self, node_id: &str) -> Result<Vec<usize>> {
        let mut v = *self.index.get(node_id).ok_or_else(|| Error::UnknownNode(node_id.into()))?;
        let mut path = Vec::with_capacity(self.depth[v]);
        while let Some(li) = self.parent_line[v] {
            path.push(li);
            v = self.parent[v].expect("parent exists when a parent line does");
        }
        Ok(path)
    }

    /// Sum of the impedance blocks along the node's substation path.
    pub fn path_impedance(&self, node_id: &str) -> Result<ImpedanceBlock> {
        Ok(self
            .path_line_indices(node_id)?
            .into_iter()
            .fold(ImpedanceBlock::zeros(), |acc, li| acc + self.lines[li].z.block()))
    }

    /// Same topology with every line impedance replaced by `f(line)`.
    pub fn map_impedances<F>(&self, mut f: F) -> Result<Feeder>
    where
        F: FnMut(&Line) -> Result<LineImpedance>,
    {
        let mut out = self.clone();
        for (line, new) in out.lines.iter_mut().zip(&self.lines) {
            line.z = f(new)?;
        }
        Ok(out)
    }

    pub fn to_file(&self) -> FeederFile {
        FeederFile {
            base_kv: self.base_kv,
            base_mva: self.base_mva,
            substation: self.substation().to_string(),
            nodes: self.nodes.iter().map(|n| NodeRecord { id: n.id.clone(), phases: n.phases }).collect(),
            lines: self
                .lines
                .iter()
                .map(|l| LineRecord {
                    from: l.from.clone(),
                    to: l.to.clone(),
                    z: block_to_array(l.z.block()),
                })
                .collect(),
        }
    }
}

pub(crate) fn block_to_array(z: &ImpedanceBlock) -> [[[f64; 2]; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| [z[(i, j)].re, z[(i, j)].im]))
}

pub(crate) fn array_to_block(a: &[[[f64; 2]; 3]; 3]) -> ImpedanceBlock {
    ImpedanceBlock::from_fn(|i, j| Complex64::new(a[i][j][0], a[i][j][1]))
}

/// On-disk feeder description (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederFile {
    pub base_kv: f64,
    pub base_mva: f64,
    pub substation: String,
    pub nodes: Vec<NodeRecord>,
    pub lines: Vec<LineRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: String,
    pub phases: PhaseSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    pub from: String,
    pub to: String,
    /// Row-major 3×3 block of `[r, x]` pairs in per unit.
    pub z: [[[f64; 2]; 3]; 3],
}

impl FeederFile {
    pub fn into_feeder(self) -> Result<Feeder> {
        let nodes = self.nodes.into_iter().map(|n| Node { id: n.id, phases: n.phases }).collect();
        let lines = self
            .lines
            .into_iter()
            .map(|l| {
                let z = LineImpedance::from_block(array_to_block(&l.z))
                    .map_err(|e| Error::Impedance(format!("line {}-{}: {e}", l.from, l.to)))?;
                Ok(Line { from: l.from, to: l.to, z })
            })
            .collect::<Result<Vec<_>>>()?;
        Feeder::new(self.base_kv, self.base_mva, &self.substation, nodes, lines)
    }
}

pub fn parse_feeder(json: &str) -> Result<Feeder> {
    let file: FeederFile = serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_feeder()
}

pub fn load_feeder(path: impl AsRef<Path>) -> Result<Feeder> {
    parse_feeder(&std::fs::read_to_string(path)?)
}

/// Squared-voltage sensitivities `v = R p + X q + v0` over the
/// non-substation nodes, three slots per node.
#[derive(Debug, Clone)]
pub struct SensitivityMatrices {
    r: DMatrix<f64>,
    x: DMatrix<f64>,
    nodes: Vec<String>,
    phases: Vec<PhaseSet>,
    index: HashMap<String, usize>,
}

impl SensitivityMatrices {
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_phases(&self, node: &str) -> Option<PhaseSet> {
        self.index.get(node).map(|&i| self.phases[i])
    }

    pub fn node_position(&self, node: &str) -> Option<usize> {
        self.index.get(node).copied()
    }

    /// Row index of `(node, phase)`; present even for absent phases.
    pub fn row(&self, node: &str, phase: Phase) -> Option<usize> {
        self.index.get(node).map(|&i| 3 * i + phase.index())
    }

    /// `true` for rows of present phases.
    pub fn mask(&self) -> Vec<bool> {
        self.phases.iter().flat_map(|p| p.mask()).collect()
    }

    /// Sub-block over a subset of nodes, in the order given. Entries only
    /// depend on the two nodes' paths, so this equals building the full
    /// matrices and slicing.
    pub fn restrict<S: AsRef<str>>(&self, ids: &[S]) -> Result<SensitivityMatrices> {
        let pos = ids
            .iter()
            .map(|id| self.index.get(id.as_ref()).copied().ok_or_else(|| Error::UnknownNode(id.as_ref().into())))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<usize> = pos.iter().flat_map(|&p| (3 * p)..(3 * p + 3)).collect();
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(rows.len(), rows.len(), |i, j| m[(rows[i], rows[j])]);
        let nodes: Vec<String> = ids.iter().map(|s| s.as_ref().to_string()).collect();
        let mut index = HashMap::new();
        for (i, id) in nodes.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Configuration(format!("node `{id}` listed twice")));
            }
        }
        Ok(SensitivityMatrices {
            r: pick(&self.r),
            x: pick(&self.x),
            phases: pos.iter().map(|&p| self.phases[p]).collect(),
            nodes,
            index,
        })
    }

    /// Assembles sensitivities directly from blocks; used for analytic
    /// two-bus fixtures where the B-matrix entry is prescribed.
    pub fn from_parts(
        r: DMatrix<f64>,
        x: DMatrix<f64>,
        nodes: Vec<(String, PhaseSet)>,
    ) -> Result<SensitivityMatrices> {
        let dim = 3 * nodes.len();
        if r.shape() != (dim, dim) || x.shape() != (dim, dim) {
            return Err(Error::InvalidArgument(format!("sensitivity blocks must be {dim}x{dim}")));
        }
        let index = nodes.iter().enumerate().map(|(i, (id, _))| (id.clone(), i)).collect();
        let (nodes, phases) = nodes.into_iter().unzip();
        Ok(SensitivityMatrices { r, x, nodes, phases, index })
    }
}

/// `R[i,j] = 2 Σ Re Z` and `X[i,j] = 2 Σ Im Z` over the lines shared by the
/// substation paths of nodes `i` and `j`, masked to the phases present at
/// each node.
pub fn build_sensitivity(f: &Feeder) -> SensitivityMatrices {
    let n_all = f.nodes.len();
    // Cumulative path impedance of every node, computed parent-first.
    let mut order: Vec<usize> = (0..n_all).collect();
    order.sort_by_key(|&v| f.depth[v]);
    let mut cumulative = vec![ImpedanceBlock::zeros(); n_all];
    for &v in &order {
        if let (Some(u), Some(li)) = (f.parent[v], f.parent_line[v]) {
            cumulative[v] = cumulative[u] + f.lines[li].z.block();
        }
    }

    let state: Vec<usize> = (0..n_all).filter(|&v| v != f.substation).collect();
    let n = state.len();
    let mut r = DMatrix::zeros(3 * n, 3 * n);
    let mut x = DMatrix::zeros(3 * n, 3 * n);
    for (a, &i) in state.iter().enumerate() {
        for (b, &j) in state.iter().enumerate().skip(a) {
            let shared = &cumulative[lowest_common_ancestor(f, i, j)];
            let (pi, pj) = (f.nodes[i].phases, f.nodes[j].phases);
            for p in pi.iter() {
                for q in pj.iter() {
                    let z = shared[(p.index(), q.index())];
                    let (row, col) = (3 * a + p.index(), 3 * b + q.index());
                    r[(row, col)] = 2.0 * z.re;
                    x[(row, col)] = 2.0 * z.im;
                    r[(col, row)] = 2.0 * z.re;
                    x[(col, row)] = 2.0 * z.im;
                }
            }
        }
    }
    let nodes: Vec<String> = state.iter().map(|&v| f.nodes[v].id.clone()).collect();
    let index = nodes.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
    SensitivityMatrices { r, x, phases: state.iter().map(|&v| f.nodes[v].phases).collect(), nodes, index }
}

fn lowest_common_ancestor(f: &Feeder, mut i: usize, mut j: usize) -> usize {
    while f.depth[i] > f.depth[j] {
        i = f.parent[i].unwrap();
    }
    while f.depth[j] > f.depth[i] {
        j = f.parent[j].unwrap();
    }
    while i != j {
        i = f.parent[i].unwrap();
        j = f.parent[j].unwrap();
    }
    i
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(r: f64, x: f64) -> Complex64 {
        Complex64::new(r, x)
    }

    fn node(id: &str, ph: &str) -> Node {
        Node { id: id.into(), phases: ph.parse().unwrap() }
    }

    fn line(from: &str, to: &str, r: f64, x: f64, ph: &str) -> Line {
        Line { from: from.into(), to: to.into(), z: LineImpedance::diagonal(r, x, ph.parse().unwrap()).unwrap() }
    }

    #[test]
    fn phase_set_parsing() {
        assert_eq!("ABC".parse::<PhaseSet>().unwrap(), PhaseSet::ABC);
        assert_eq!("ca".parse::<PhaseSet>().unwrap().to_string(), "AC");
        assert!("".parse::<PhaseSet>().is_err());
        assert!("AA".parse::<PhaseSet>().is_err());
        assert!("AD".parse::<PhaseSet>().is_err());
        assert!(PhaseSet::A.is_subset(PhaseSet::ABC));
        assert!(!PhaseSet::ABC.is_subset(PhaseSet::A));
    }

    #[test]
    fn impedance_invariants() {
        let mut z = ImpedanceBlock::zeros();
        z[(0, 0)] = c(0.1, 0.2);
        z[(0, 1)] = c(0.0, 0.05);
        assert!(matches!(LineImpedance::new(z, PhaseSet::ABC), Err(Error::Impedance(_))));
        z[(1, 0)] = c(0.0, 0.05);
        // phase B present in the mutual but its self term is zero
        assert!(LineImpedance::from_block(z).is_err());
        z[(1, 1)] = c(0.1, 0.2);
        let li = LineImpedance::from_block(z).unwrap();
        assert_eq!(li.phases().to_string(), "AB");
        assert!(LineImpedance::diagonal(-0.1, 0.2, PhaseSet::A).is_err());
    }

    #[test]
    fn loop_is_a_topology_error() {
        let nodes = vec![node("s", "ABC"), node("a", "ABC"), node("b", "ABC")];
        let lines = vec![
            line("s", "a", 0.1, 0.2, "ABC"),
            line("a", "b", 0.1, 0.2, "ABC"),
            line("b", "a", 0.1, 0.2, "ABC"),
        ];
        assert!(matches!(Feeder::new(4.16, 1.0, "s", nodes.clone(), lines), Err(Error::Topology(_))));

        // n-1 lines but one of them closes a loop, leaving `c` orphaned
        let mut nodes = nodes;
        nodes.push(node("c", "ABC"));
        let lines = vec![
            line("s", "a", 0.1, 0.2, "ABC"),
            line("a", "b", 0.1, 0.2, "ABC"),
            line("b", "s", 0.1, 0.2, "ABC"),
        ];
        assert!(matches!(Feeder::new(4.16, 1.0, "s", nodes, lines), Err(Error::Topology(_))));
    }

    #[test]
    fn duplicate_ids_and_phase_nesting() {
        let nodes = vec![node("s", "ABC"), node("s", "A")];
        assert!(matches!(
            Feeder::new(4.16, 1.0, "s", nodes, vec![line("s", "s", 0.1, 0.1, "A")]),
            Err(Error::Topology(_))
        ));
        let nodes = vec![node("s", "ABC"), node("a", "AB")];
        assert!(matches!(
            Feeder::new(4.16, 1.0, "s", nodes, vec![line("s", "a", 0.1, 0.1, "A")]),
            Err(Error::Phase(_))
        ));
    }

    #[test]
    fn reversed_lines_are_reoriented() {
        let nodes = vec![node("s", "ABC"), node("a", "ABC")];
        let f = Feeder::new(4.16, 1.0, "s", nodes, vec![line("a", "s", 0.1, 0.1, "ABC")]).unwrap();
        assert_eq!(f.lines()[0].from, "s");
        assert_eq!(f.path_to_substation("a").unwrap().len(), 1);
        assert!(f.path_to_substation("s").unwrap().is_empty());
        assert!(matches!(f.path_to_substation("zz"), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn two_bus_single_phase_sensitivity() {
        let nodes = vec![node("slack", "A"), node("pq", "A")];
        let f = Feeder::new(4.16, 1.0, "slack", nodes, vec![line("slack", "pq", 0.0, 0.2, "A")]).unwrap();
        let s = build_sensitivity(&f);
        assert_eq!(s.dim(), 3);
        assert_eq!(s.x()[(0, 0)], 0.4);
        assert_eq!(s.r()[(0, 0)], 0.0);
        assert_eq!(s.mask(), vec![true, false, false]);
        assert_eq!(s.x().iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn three_phase_diagonal_block() {
        let nodes = vec![node("s", "ABC"), node("a", "ABC")];
        let f = Feeder::new(4.16, 1.0, "s", nodes, vec![line("s", "a", 0.0, 0.3, "ABC")]).unwrap();
        let s = build_sensitivity(&f);
        assert_eq!(*s.x(), DMatrix::identity(3, 3) * 0.6);
    }

    #[test]
    fn shared_trunk_sets_off_diagonal_blocks() {
        // s -> t (trunk) -> {l1, l2}
        let nodes = vec![node("s", "ABC"), node("t", "ABC"), node("l1", "ABC"), node("l2", "A")];
        let lines = vec![
            line("s", "t", 0.3, 0.5, "ABC"),
            line("t", "l1", 0.7, 0.1, "ABC"),
            line("t", "l2", 0.2, 0.9, "A"),
        ];
        let f = Feeder::new(4.16, 1.0, "s", nodes, lines).unwrap();
        let s = build_sensitivity(&f);
        let (l1, l2) = (s.row("l1", Phase::A).unwrap(), s.row("l2", Phase::A).unwrap());
        assert!((s.r()[(l1, l2)] - 0.6).abs() < 1e-15);
        assert!((s.r()[(l1, l1)] - 2.0).abs() < 1e-15);
        assert!((s.x()[(l2, l2)] - 2.8).abs() < 1e-15);
        // absent phases of l2 stay zero
        let l2b = s.row("l2", Phase::B).unwrap();
        assert!(s.r().row(l2b).iter().all(|v| *v == 0.0));
        assert!(s.x().column(l2b).iter().all(|v| *v == 0.0));

        let sub = s.restrict(&["l2", "l1"]).unwrap();
        assert_eq!(sub.dim(), 6);
        assert_eq!(sub.r()[(0, 3)], s.r()[(l2, l1)]);
    }
}
