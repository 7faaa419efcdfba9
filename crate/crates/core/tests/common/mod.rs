//! Helpers shared by the integration tests: random radial feeders and
//! oracles written independently of the library code they check.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet, VecDeque};

use gridstab::feeder::{FeederFile, ImpedanceBlock, LineImpedance, LineRecord, NodeRecord};
use gridstab::sim::{Load, PhasorRef, SimScenario};
use gridstab::stability::spectral_radius;
use gridstab::{build_sensitivity, build_system, ControlKind, Feeder, GainSet, PhaseSet};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const SUBSETS: [&str; 7] = ["A", "B", "C", "AB", "AC", "BC", "ABC"];

fn random_subset(rng: &mut ChaCha8Rng, parent: PhaseSet) -> PhaseSet {
    if rng.random_bool(0.6) {
        return parent;
    }
    let options: Vec<PhaseSet> =
        SUBSETS.iter().map(|s| s.parse::<PhaseSet>().unwrap()).filter(|s| s.is_subset(parent)).collect();
    options[rng.random_range(0..options.len())]
}

/// Symmetric block with positive self terms and smaller mutual terms on the
/// given phases, zero elsewhere.
pub fn random_block(rng: &mut ChaCha8Rng, phases: PhaseSet) -> ImpedanceBlock {
    let mut z = ImpedanceBlock::zeros();
    for p in phases.iter() {
        let i = p.index();
        z[(i, i)] = Complex64::new(rng.random_range(0.005..0.3), rng.random_range(0.01..0.4));
    }
    for p in phases.iter() {
        for q in phases.iter() {
            let (i, j) = (p.index(), q.index());
            if i < j {
                let m = Complex64::new(rng.random_range(0.0..0.1), rng.random_range(0.0..0.15));
                z[(i, j)] = m;
                z[(j, i)] = m;
            }
        }
    }
    z
}

/// Random tree over `n` nodes (substation `n0` included). Every node hangs
/// off an earlier one, so the file is already radial; lines are sometimes
/// written child-first to exercise reorientation.
pub fn random_feeder_file(seed: u64, n: usize) -> FeederFile {
    let mut rng = rng(seed);
    let mut phases = vec![PhaseSet::ABC];
    let mut nodes = vec![NodeRecord { id: "n0".into(), phases: PhaseSet::ABC }];
    let mut lines = Vec::new();
    for i in 1..n {
        let parent = rng.random_range(0..i);
        let ph = random_subset(&mut rng, phases[parent]);
        phases.push(ph);
        nodes.push(NodeRecord { id: format!("n{i}"), phases: ph });
        let z = random_block(&mut rng, ph);
        let a = std::array::from_fn(|r| std::array::from_fn(|c| [z[(r, c)].re, z[(r, c)].im]));
        let (from, to) = if rng.random_bool(0.2) { (format!("n{i}"), format!("n{parent}")) } else { (format!("n{parent}"), format!("n{i}")) };
        lines.push(LineRecord { from, to, z: a });
    }
    FeederFile { base_kv: 4.16, base_mva: 1.0, substation: "n0".into(), nodes, lines }
}

pub fn random_feeder(seed: u64, n: usize) -> Feeder {
    random_feeder_file(seed, n).into_feeder().expect("generated feeder is valid")
}

fn block_of(l: &LineRecord) -> ImpedanceBlock {
    ImpedanceBlock::from_fn(|i, j| Complex64::new(l.z[i][j][0], l.z[i][j][1]))
}

/// Sensitivities by explicit path sets: walk the undirected line list
/// breadth-first from the substation, collect the lines above every node
/// and sum over the intersection of the two sets for every node pair.
pub fn brute_force_sensitivity(file: &FeederFile) -> (Vec<String>, DMatrix<f64>, DMatrix<f64>) {
    let mut adj: HashMap<&str, Vec<(usize, &str)>> = HashMap::new();
    for (k, l) in file.lines.iter().enumerate() {
        adj.entry(&l.from).or_default().push((k, &l.to));
        adj.entry(&l.to).or_default().push((k, &l.from));
    }
    let mut above: HashMap<&str, HashSet<usize>> = HashMap::new();
    above.insert(&file.substation, HashSet::new());
    let mut queue = VecDeque::from([file.substation.as_str()]);
    while let Some(u) = queue.pop_front() {
        for &(k, v) in adj.get(u).map(Vec::as_slice).unwrap_or(&[]) {
            if !above.contains_key(v) {
                let mut set = above[u].clone();
                set.insert(k);
                above.insert(v, set);
                queue.push_back(v);
            }
        }
    }
    let nodes: Vec<&NodeRecord> = file.nodes.iter().filter(|n| n.id != file.substation).collect();
    let n = nodes.len();
    let mut r = DMatrix::zeros(3 * n, 3 * n);
    let mut x = DMatrix::zeros(3 * n, 3 * n);
    for (a, na) in nodes.iter().enumerate() {
        for (b, nb) in nodes.iter().enumerate() {
            let mut shared = ImpedanceBlock::zeros();
            for k in above[na.id.as_str()].intersection(&above[nb.id.as_str()]) {
                shared += block_of(&file.lines[*k]);
            }
            for p in 0..3 {
                for q in 0..3 {
                    if na.phases.mask()[p] && nb.phases.mask()[q] {
                        r[(3 * a + p, 3 * b + q)] = 2.0 * shared[(p, q)].re;
                        x[(3 * a + p, 3 * b + q)] = 2.0 * shared[(p, q)].im;
                    }
                }
            }
        }
    }
    (nodes.iter().map(|n| n.id.clone()).collect(), r, x)
}

/// Largest singular value by power iteration on `ZᴴZ`.
pub fn spectral_norm_power(z: &ImpedanceBlock) -> f64 {
    let g = z.adjoint() * z;
    let mut v = nalgebra::Vector3::new(Complex64::new(1.0, 0.3), Complex64::new(0.7, -0.2), Complex64::new(0.4, 0.9));
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let w = g * v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / v.norm();
        v = w / Complex64::new(norm, 0.0);
    }
    lambda.sqrt()
}

/// `e_k = Dᵏ e₀ + (I + D + … + Dᵏ⁻¹) c` from explicit matrix powers.
pub fn matrix_power_trajectory(d: &DMatrix<f64>, e0: &DVector<f64>, c: &DVector<f64>, steps: usize) -> Vec<DVector<f64>> {
    let n = d.nrows();
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut series = DMatrix::<f64>::zeros(n, n);
    let mut out = vec![e0.clone()];
    for _ in 1..=steps {
        series += &power;
        power = d * &power;
        out.push(&power * e0 + &series * c);
    }
    out
}

/// Fixed point of `e ← D e + c` by plain iteration.
pub fn iterate_fixed_point(d: &DMatrix<f64>, c: &DVector<f64>, iters: usize) -> DVector<f64> {
    let mut e = DVector::zeros(c.len());
    for _ in 0..iters {
        e = d * &e + c;
    }
    e
}

pub fn line_impedance(z: ImpedanceBlock) -> LineImpedance {
    LineImpedance::from_block(z).expect("valid block")
}

/// `k` distinct co-located pairs on random load nodes.
pub fn random_configuration(rng: &mut ChaCha8Rng, f: &Feeder, k: usize) -> gridstab::Configuration {
    let mut ids: Vec<String> = f.load_nodes().map(|n| n.id.clone()).collect();
    let mut chosen = Vec::new();
    for _ in 0..k.min(ids.len()) {
        chosen.push(ids.swap_remove(rng.random_range(0..ids.len())));
    }
    gridstab::Configuration::co_located(chosen)
}

/// Per-phase gains drawn log-uniformly from `[lo, hi]`.
pub fn random_gains(rng: &mut ChaCha8Rng, cfg: &gridstab::Configuration, lo: f64, hi: f64) -> GainSet {
    let mut draw = || (rng.random_range(lo.ln()..=hi.ln())).exp();
    GainSet(
        (0..cfg.len())
            .map(|_| gridstab::control::ApnpGains { q: std::array::from_fn(|_| draw()), p: std::array::from_fn(|_| draw()) })
            .collect(),
    )
}

/// Random scenario with the linear solver whose closed loop has a spectral
/// radius in `[0.2, 1.05]`.
pub fn random_linear_scenario(seed: u64) -> SimScenario {
    let mut rng = rng(seed);
    let kind = if rng.random_bool(0.5) { ControlKind::Pbc } else { ControlKind::Droop };
    loop {
        let f = random_feeder(rng.random(), rng.random_range(2..7));
        let sens = build_sensitivity(&f);
        let k = rng.random_range(1..4);
        let cfg = random_configuration(&mut rng, &f, k);
        let gains = random_gains(&mut rng, &cfg, 0.1, 10.0);
        let g = gains.to_matrix(&sens, &cfg, kind).unwrap();
        let rho = spectral_radius(&build_system(kind, &sens, &cfg, &g).unwrap()).unwrap();
        let target = rng.random_range(0.2..1.05);
        let scale = match kind {
            ControlKind::Droop if rho > 0.0 => target / rho,
            ControlKind::Droop => continue,
            // PBC radius is not linear in the scale; keep draws that land in range
            ControlKind::Pbc if (0.2..=1.05).contains(&rho) => 1.0,
            ControlKind::Pbc => continue,
        };
        let mut loads = Vec::new();
        for n in f.load_nodes() {
            if rng.random_bool(0.5) {
                loads.push(Load { node: n.id.clone(), phases: None, p: rng.random_range(0.0..0.05), q: rng.random_range(-0.02..0.02) });
            }
        }
        let mut scn = SimScenario::new(f, cfg, kind, gains.scaled(scale));
        scn.loads = loads;
        scn.v_ref = PhasorRef { mag: rng.random_range(0.97..1.03), angle_deg: rng.random_range(-1.0..1.0) };
        scn.initial = Some(PhasorRef { mag: rng.random_range(0.95..1.05), angle_deg: rng.random_range(-2.0..2.0) });
        scn.horizon = 30;
        return scn;
    }
}

pub fn exogenous(scn: &SimScenario) -> DVector<f64> {
    let sens = build_sensitivity(&scn.feeder);
    let n = sens.dim();
    match scn.kind {
        ControlKind::Pbc => DVector::zeros(2 * n),
        ControlKind::Droop => {
            let (mut p, mut q) = (DVector::zeros(n), DVector::zeros(n));
            for l in &scn.loads {
                for ph in sens.node_phases(&l.node).unwrap().iter() {
                    let i = sens.row(&l.node, ph).unwrap();
                    p[i] += l.p;
                    q[i] += l.q;
                }
            }
            -(sens.r() * p + sens.x() * q)
        }
    }
}
