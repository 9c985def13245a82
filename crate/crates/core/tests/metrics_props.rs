//! Interpretability metrics: Pareto utility, consistency, stability and ROT bookkeeping.

use proptest::prelude::*;
use protoloc::fixtures::{part_detector, ToyFixture, PARETO_CSV, TOY_SEED};
use protoloc::metrics::{
    consistency, consistency_from, derive_seed, pareto_front, part_frequencies, part_observations, read_pareto_csv,
    relevance_ordering_test, rot_counts, stability, Annotations, MetricConfig, MetricError, ParetoPoint, RotConfig,
};
use protoloc::pixel_mapping::KernelConfig;

fn brute_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    points
        .iter()
        .filter(|p| {
            !points.iter().any(|q| {
                q.mrf <= p.mrf && q.accuracy >= p.accuracy && (q.mrf < p.mrf || q.accuracy > p.accuracy)
            })
        })
        .cloned()
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn pareto_matches_quadratic_scan(raw in prop::collection::vec((0u32..40, 0u32..40), 1..100)) {
        // Coarse values force ties in both coordinates.
        let points: Vec<ParetoPoint> = raw
            .iter()
            .enumerate()
            .map(|(i, &(m, a))| ParetoPoint::new(&format!("p{i}"), m as f64 * 2.5, a as f64 * 2.5))
            .collect();
        let front = pareto_front(&points);
        prop_assert_eq!(&front, &brute_front(&points));
        for a in &front {
            for b in &front {
                prop_assert!(!a.dominates(b));
            }
        }
        let best = points.iter().map(|p| p.accuracy).fold(f64::MIN, f64::max);
        prop_assert!(front.iter().any(|p| p.accuracy == best));
    }

    #[test]
    fn frequencies_count_hits_over_visible(obs in prop::collection::vec(prop::collection::vec(any::<(bool, bool)>(), 3), 0..20)) {
        // o implies u.
        let pairs: Vec<(Vec<bool>, Vec<bool>)> =
            obs.iter().map(|img| (img.iter().map(|&(o, u)| o && u).collect(), img.iter().map(|&(_, u)| u).collect())).collect();
        let f = part_frequencies(&pairs, 3);
        for k in 0..3 {
            let seen = pairs.iter().filter(|(_, u)| u[k]).count();
            let hit = pairs.iter().filter(|(o, _)| o[k]).count();
            match f[k] {
                None => prop_assert_eq!(seen, 0),
                Some(v) => prop_assert_eq!(v, hit as f64 / seen as f64),
            }
        }
    }
}

#[test]
fn shipped_table_is_its_own_front() {
    let points = read_pareto_csv(PARETO_CSV.as_bytes()).unwrap();
    assert_eq!(points.len(), 4);
    assert_eq!(pareto_front(&points), points);
    assert!(read_pareto_csv("label,mrf,accuracy\nx,120,50\n".as_bytes()).is_err());
}

#[test]
fn consistency_is_monotone_in_mu_and_stability_is_one_without_noise() {
    let fx = ToyFixture::generate(TOY_SEED);
    let bundle = fx.bundle().unwrap();
    let cfg = MetricConfig { window: (16, 16), ..MetricConfig::default() };
    let obs = part_observations(&bundle, &fx.dataset.images, &fx.dataset, &fx.annotations, &cfg).unwrap();
    let mut last = f64::INFINITY;
    let mut soft = None;
    for step in 1..=20 {
        let mu = step as f64 / 20.0;
        let r = consistency_from(&obs, bundle.bank.class_of(), &fx.dataset, &fx.annotations, mu).unwrap();
        assert!(r.s_con <= last, "mu {mu}");
        assert!(*soft.get_or_insert(r.soft) == r.soft);
        last = r.s_con;
    }
    let s = stability(&bundle, &fx.dataset, &fx.annotations, &MetricConfig { sigma: 0.0, ..cfg }, 3).unwrap();
    assert_eq!(s.s_sta, 1.0);
    assert!(s.per_prototype.iter().all(|&v| v == 1.0));
    let noisy = stability(&bundle, &fx.dataset, &fx.annotations, &cfg, 3).unwrap();
    assert!((0.0..=1.0).contains(&noisy.s_sta));
    assert_eq!(noisy, stability(&bundle, &fx.dataset, &fx.annotations, &cfg, 3).unwrap());
}

#[test]
fn detector_always_lands_on_its_part() {
    let fx = ToyFixture::generate(TOY_SEED);
    let det = part_detector(&fx.dataset).unwrap();
    let cfg = MetricConfig { window: (8, 8), ..MetricConfig::default() };
    let r = consistency(&det, &fx.dataset, &fx.annotations, &cfg).unwrap();
    assert_eq!(r.s_con, 1.0);
    assert_eq!(r.prototypes[0].best_part, "crest");
}

#[test]
fn invalid_configs_and_annotations_are_rejected() {
    let fx = ToyFixture::generate(TOY_SEED);
    let bundle = fx.bundle().unwrap();
    for cfg in [
        MetricConfig { mu: 0.0, ..MetricConfig::default() },
        MetricConfig { sigma: -0.1, ..MetricConfig::default() },
        MetricConfig { window: (0, 4), ..MetricConfig::default() },
    ] {
        assert!(matches!(
            consistency(&bundle, &fx.dataset, &fx.annotations, &cfg),
            Err(MetricError::InvalidConfig(_))
        ));
    }
    let ok = r#"{"parts":["a","b","c"],"images":{"0":{"visible":[true,false,true],"centers":[[1.5,2.0],null,[[0,0],[9,9]]]}}}"#;
    let a = Annotations::from_json(ok).unwrap();
    assert_eq!(a.image(0).unwrap().centers[2].as_ref().unwrap().points().len(), 2);
    assert!(matches!(a.image(1), Err(MetricError::MissingAnnotation(_))));
    let bad = r#"{"parts":["a"],"images":{"0":{"visible":[true],"centers":[null]}}}"#;
    assert!(matches!(Annotations::from_json(bad), Err(MetricError::InvalidAnnotations(_))));
    assert_eq!(Annotations::from_json(&a.to_json()).unwrap(), a);
}

#[test]
fn rot_is_deterministic_and_normalized() {
    let fx = ToyFixture::generate(TOY_SEED);
    let bundle = fx.bundle().unwrap();
    let img = fx.bank.provenance()[0].unwrap().image;
    let cfg = RotConfig { samples: 2, stride: 0.05, seed: 9, kernel: KernelConfig { enabled: false }, ..RotConfig::default() };
    let a = relevance_ordering_test(&bundle, &fx.dataset.images[img], img, 0, &cfg).unwrap();
    let b = relevance_ordering_test(&bundle, &fx.dataset.images[img], img, 0, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.fractions.len(), rot_counts(32 * 32, 0.05).len());
    assert_eq!(a.mean_curve[0], 0.0);
    assert!((a.mean_curve.last().unwrap() - 1.0).abs() < 1e-12);
    let mean: f64 = a.mean_curve.iter().sum::<f64>() / a.mean_curve.len() as f64;
    assert!((mean - a.ausc).abs() < 1e-12);
    let other = relevance_ordering_test(&bundle, &fx.dataset.images[img], img, 0, &RotConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.mean_curve, other.mean_curve);
    assert!(relevance_ordering_test(&bundle, &fx.dataset.images[img], img, 0, &RotConfig { samples: 0, ..cfg }).is_err());
}

#[test]
fn derived_seeds_are_stable_and_distinct() {
    assert_eq!(derive_seed(1, &[2, 3]), derive_seed(1, &[2, 3]));
    let seeds: std::collections::BTreeSet<u64> =
        (0..50).flat_map(|a| (0..50).map(move |b| derive_seed(7, &[a, b]))).collect();
    assert_eq!(seeds.len(), 2500);
    assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
}
