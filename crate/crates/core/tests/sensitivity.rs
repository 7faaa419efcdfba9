mod common;

use gridstab::feeder::{Line, Node};
use gridstab::{build_sensitivity, Feeder, Phase};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_brute_force_path_intersection(seed in any::<u64>(), n in 2usize..14) {
        let file = common::random_feeder_file(seed, n);
        let sens = build_sensitivity(&file.clone().into_feeder().unwrap());
        let (ids, r, x) = common::brute_force_sensitivity(&file);
        // same node set, possibly in another order
        let perm: Vec<usize> = ids.iter().map(|id| sens.node_position(id).unwrap()).collect();
        for a in 0..ids.len() {
            for b in 0..ids.len() {
                for p in 0..3 {
                    for q in 0..3 {
                        let (i, j) = (3 * perm[a] + p, 3 * perm[b] + q);
                        prop_assert!((sens.r()[(i, j)] - r[(3 * a + p, 3 * b + q)]).abs() < 1e-12);
                        prop_assert!((sens.x()[(i, j)] - x[(3 * a + p, 3 * b + q)]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn exactly_symmetric(seed in any::<u64>(), n in 2usize..14) {
        let sens = build_sensitivity(&common::random_feeder(seed, n));
        prop_assert_eq!(sens.r().clone(), sens.r().transpose());
        prop_assert_eq!(sens.x().clone(), sens.x().transpose());
    }

    #[test]
    fn diagonal_block_is_twice_the_path_sum(seed in any::<u64>(), n in 2usize..14) {
        let f = common::random_feeder(seed, n);
        let sens = build_sensitivity(&f);
        for node in f.load_nodes() {
            let z = f.path_impedance(&node.id).unwrap();
            for p in node.phases.iter() {
                for q in node.phases.iter() {
                    let (i, j) = (sens.row(&node.id, p).unwrap(), sens.row(&node.id, q).unwrap());
                    prop_assert!((sens.r()[(i, j)] - 2.0 * z[(p.index(), q.index())].re).abs() < 1e-12);
                    prop_assert!((sens.x()[(i, j)] - 2.0 * z[(p.index(), q.index())].im).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn appending_a_line_never_shrinks_the_diagonal(seed in any::<u64>(), n in 2usize..12, at in any::<prop::sample::Index>()) {
        let f = common::random_feeder(seed, n);
        let parent = at.get(f.nodes()).clone();
        let mut rng = common::rng(seed ^ 0x5eed);
        let z = common::line_impedance(common::random_block(&mut rng, parent.phases));
        let mut nodes = f.nodes().to_vec();
        let mut lines = f.lines().to_vec();
        nodes.push(Node { id: "leaf".into(), phases: parent.phases });
        lines.push(Line { from: parent.id.clone(), to: "leaf".into(), z });
        let g = Feeder::new(f.base_kv(), f.base_mva(), f.substation(), nodes, lines).unwrap();
        let (before, after) = (build_sensitivity(&f), build_sensitivity(&g));
        for node in f.load_nodes() {
            for p in node.phases.iter() {
                let (i, j) = (before.row(&node.id, p).unwrap(), after.row(&node.id, p).unwrap());
                prop_assert_eq!(before.r()[(i, i)], after.r()[(j, j)]);
                prop_assert_eq!(before.x()[(i, i)], after.x()[(j, j)]);
            }
        }
        for p in parent.phases.iter() {
            let leaf = after.row("leaf", p).unwrap();
            let above = if parent.id == f.substation() { 0.0 } else {
                let k = after.row(&parent.id, p).unwrap();
                after.x()[(k, k)]
            };
            prop_assert!(after.x()[(leaf, leaf)] >= above);
        }
    }
}

#[test]
fn absent_phases_are_structural_zeros() {
    let f = common::random_feeder(3, 12);
    let sens = build_sensitivity(&f);
    let mask = sens.mask();
    for node in f.load_nodes() {
        for p in Phase::ALL {
            let i = 3 * sens.node_position(&node.id).unwrap() + p.index();
            assert_eq!(mask[i], node.phases.contains(p));
            if !node.phases.contains(p) {
                assert!(sens.r().row(i).iter().all(|v| *v == 0.0));
                assert!(sens.x().column(i).iter().all(|v| *v == 0.0));
            }
        }
    }
}
