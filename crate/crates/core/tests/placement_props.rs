mod common;

use gridstab::feeder::load_feeder;
use gridstab::fixtures::{self, PQ};
use gridstab::metrics::RatioKind;
use gridstab::placement::{cpp, cross_apply_experiment, sample_gain_sets, Color, CrossApplyOptions, SamplingSpec};
use gridstab::{Configuration, ControlKind};
use proptest::prelude::*;

fn ieee123() -> gridstab::Feeder {
    load_feeder(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/ieee123.json")).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn heatmaps_are_reproducible(seed in any::<u64>(), n in 3usize..9, pbc in any::<bool>()) {
        let kind = if pbc { ControlKind::Pbc } else { ControlKind::Droop };
        let f = common::random_feeder(seed, n);
        let base = common::random_configuration(&mut common::rng(seed), &f, 1);
        let spec = SamplingSpec::new(40, (1e-2, 1e2), seed);
        let a = cpp(&f, &base, kind, &spec).unwrap();
        let b = cpp(&f, &base, kind, &spec).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn more_samples_never_turn_blue_red(seed in any::<u64>(), n in 3usize..9, pbc in any::<bool>()) {
        let kind = if pbc { ControlKind::Pbc } else { ControlKind::Droop };
        let f = common::random_feeder(seed, n);
        let small = cpp(&f, &Configuration::default(), kind, &SamplingSpec::new(30, (1e-2, 1e2), seed)).unwrap();
        let large = cpp(&f, &Configuration::default(), kind, &SamplingSpec::new(120, (1e-2, 1e2), seed)).unwrap();
        for (s, l) in small.verdicts.iter().zip(&large.verdicts) {
            prop_assert_eq!(&s.node, &l.node);
            if s.color == Color::Blue {
                prop_assert_ne!(l.color, Color::Red);
            }
        }
    }

    #[test]
    fn sample_sets_extend_by_prefix(seed in any::<u64>(), short in 1usize..50, extra in 0usize..50, k in 1usize..4) {
        let a = sample_gain_sets(&SamplingSpec::new(short, (1e-2, 1e2), seed), k, ControlKind::Pbc, &mut common::rng(seed));
        let b = sample_gain_sets(&SamplingSpec::new(short + extra, (1e-2, 1e2), seed), k, ControlKind::Pbc, &mut common::rng(seed));
        prop_assert_eq!(&a[..], &b[..short]);
    }
}

#[test]
fn good_fraction_follows_the_log_uniform_cdf() {
    // stable iff a < 2/X = 10; P(a < 10) on log-uniform [0.1, 100] is 2/3
    let f = fixtures::two_bus_1ph_feeder(0.2, 0.0);
    let r = cpp(&f, &Configuration::default(), ControlKind::Pbc, &SamplingSpec::new(4000, (0.1, 100.0), 17)).unwrap();
    assert_eq!(r.verdicts.len(), 1);
    assert!((r.verdicts[0].good_fraction - 2.0 / 3.0).abs() < 0.03, "{}", r.verdicts[0].good_fraction);
}

#[test]
fn rx_ratio_drives_two_bus_from_blue_to_red() {
    let spec = SamplingSpec::new(200, (1e-2, 1e2), 3);
    let colors: Vec<Color> = [0.0, 0.6, 5.0, 50.0, 500.0, 5000.0]
        .iter()
        .map(|&d| {
            let f = fixtures::two_bus_3ph_feeder(&fixtures::rx_block(d, 0.2));
            cpp(&f, &Configuration::default(), ControlKind::Pbc, &spec).unwrap().verdicts[0].color
        })
        .collect();
    let rank = |c: &Color| match c {
        Color::Blue => 0,
        Color::Yellow => 1,
        Color::Red => 2,
    };
    assert_eq!(colors[0], Color::Blue);
    assert_eq!(*colors.last().unwrap(), Color::Red);
    assert!(colors.windows(2).all(|w| rank(&w[0]) <= rank(&w[1])), "{colors:?}");
    assert_eq!(cpp(&fixtures::two_bus_1ph_feeder(0.2, 0.0), &Configuration::co_located([PQ]), ControlKind::Pbc, &spec)
        .unwrap()
        .verdicts
        .len(), 0);
}

#[test]
fn identity_modification_is_neutral() {
    let f = ieee123();
    for kind in [ControlKind::Pbc, ControlKind::Droop] {
        let opts = CrossApplyOptions {
            kind,
            m: 1,
            ratio: RatioKind::Rx,
            factor: 1.0,
            trials: 4,
            spec: SamplingSpec::new(50, (1e-2, 1e2), 5),
            budget: 200,
        };
        let r = cross_apply_experiment(&f, &opts).unwrap();
        assert_eq!((r.support, r.contradict, r.lost_forward, r.lost_reverse), (0, 0, 0, 0));
        assert_eq!(r.inconclusive, 4);
    }
}
