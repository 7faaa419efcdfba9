mod common;

use gridstab::control::disturbance_response;
use gridstab::stability::spectral_radius;
use gridstab::{build_sensitivity, build_system, ControlKind, GainSet};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;

fn kind_of(pbc: bool) -> ControlKind {
    if pbc {
        ControlKind::Pbc
    } else {
        ControlKind::Droop
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zero_gains_give_open_loop_radius(seed in any::<u64>(), n in 2usize..10, k in 1usize..4, pbc in any::<bool>()) {
        let kind = kind_of(pbc);
        let f = common::random_feeder(seed, n);
        let sens = build_sensitivity(&f);
        let cfg = common::random_configuration(&mut common::rng(seed), &f, k);
        let g = GainSet::uniform(&cfg, kind, 0.0).to_matrix(&sens, &cfg, kind).unwrap();
        let rho = spectral_radius(&build_system(kind, &sens, &cfg, &g).unwrap()).unwrap();
        prop_assert_eq!(rho, if pbc { 1.0 } else { 0.0 });
    }

    #[test]
    fn gain_blocks_follow_the_pairs(seed in any::<u64>(), n in 2usize..10, k in 1usize..4, pbc in any::<bool>()) {
        let kind = kind_of(pbc);
        let f = common::random_feeder(seed, n);
        let sens = build_sensitivity(&f);
        let mut rng = common::rng(seed);
        let cfg = common::random_configuration(&mut rng, &f, k);
        let g = common::random_gains(&mut rng, &cfg, 0.01, 100.0).to_matrix(&sens, &cfg, kind).unwrap();
        let pair_rows: Vec<usize> = cfg
            .nodes()
            .iter()
            .flat_map(|id| { let p = sens.node_position(id).unwrap(); 3 * p..3 * p + 3 })
            .collect();
        for m in [&g.f11, &g.f12, &g.f21, &g.f22] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if !pair_rows.contains(&i) || i / 3 != j / 3 || i % 3 != j % 3 {
                        prop_assert_eq!(m[(i, j)], 0.0);
                    }
                }
            }
        }
        prop_assert!(g.validate(&sens, &cfg, kind).is_ok());
    }

    #[test]
    fn stray_gains_are_rejected(seed in any::<u64>(), n in 3usize..10) {
        let f = common::random_feeder(seed, n);
        let sens = build_sensitivity(&f);
        let cfg = common::random_configuration(&mut common::rng(seed), &f, 1);
        let mut g = GainSet::uniform(&cfg, ControlKind::Droop, 1.0).to_matrix(&sens, &cfg, ControlKind::Droop).unwrap();
        let other = f.load_nodes().find(|nd| !cfg.occupies(&nd.id)).unwrap();
        let ph = other.phases.iter().next().unwrap();
        let row = sens.row(&other.id, ph).unwrap();
        g.f11[(row, row)] = 0.5;
        prop_assert!(build_system(ControlKind::Droop, &sens, &cfg, &g).is_err());
    }
}

/// Steady-state shift against the fixed point of 10⁴ iterations of the
/// droop recursion with a constant disturbance.
#[test]
fn disturbance_matches_iterated_fixed_point() {
    let mut rng = common::rng(2024);
    let mut checked = 0;
    while checked < 50 {
        let f = common::random_feeder(rng.random(), rng.random_range(2..9));
        let sens = build_sensitivity(&f);
        let k = rng.random_range(1..4);
        let cfg = common::random_configuration(&mut rng, &f, k);
        let gains = common::random_gains(&mut rng, &cfg, 0.1, 10.0);
        let raw = gains.to_matrix(&sens, &cfg, ControlKind::Droop).unwrap();
        let rho = spectral_radius(&build_system(ControlKind::Droop, &sens, &cfg, &raw).unwrap()).unwrap();
        if rho == 0.0 {
            continue;
        }
        let s = rng.random_range(0.2..0.9) / rho;
        let g = gains.scaled(s).to_matrix(&sens, &cfg, ControlKind::Droop).unwrap();
        let sys = build_system(ControlKind::Droop, &sens, &cfg, &g).unwrap();
        let dv = DVector::from_iterator(sens.dim(), sens.mask().into_iter().map(|m| if m { rng.random_range(-0.6..0.6) } else { 0.0 }));
        let oracle = common::iterate_fixed_point(sys.dynamics(), &dv, 10_000);
        let got = disturbance_response(&sys, &dv).unwrap().delta_ss;
        assert!((got - oracle).amax() < 1e-8);
        checked += 1;
    }
}

#[test]
fn zero_gain_disturbance_passes_through() {
    let f = common::random_feeder(5, 8);
    let sens = build_sensitivity(&f);
    let cfg = common::random_configuration(&mut common::rng(5), &f, 3);
    let g = GainSet::uniform(&cfg, ControlKind::Droop, 0.0).to_matrix(&sens, &cfg, ControlKind::Droop).unwrap();
    let sys = build_system(ControlKind::Droop, &sens, &cfg, &g).unwrap();
    let dv = DVector::from_element(sens.dim(), 0.535);
    assert_eq!(disturbance_response(&sys, &dv).unwrap().delta_ss, dv);
}
