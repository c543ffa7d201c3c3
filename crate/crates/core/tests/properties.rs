use std::collections::BTreeMap;

use mad_core::ranking::{
    classify_outcome, gradient, log_likelihood, mle_rank, split_subsets, srcc, tally_outcomes, OutcomeCase, ScoreTable,
};
use mad_core::segmap::{class_proportions, concordance, confusion};
use mad_core::selection::{run_pairwise_selection, ScaleBounds, ScaleSource};
use mad_core::synth::{brute_force_metric, brute_force_select, corrupt};
use mad_core::{
    ClassCatalog, Corpus, Gauge, LabelMap, MatrixKind, MetricKind, PairMatrix, PredictionStore, RankingConfig,
    ScaleStats, SelectionConfig,
};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

const CLASSES: usize = 5;

fn catalog() -> ClassCatalog {
    ClassCatalog::numbered(CLASSES - 1).unwrap()
}

/// Pixels are mostly class ids with an occasional ignore value.
fn pixel() -> impl Strategy<Value = u8> {
    prop_oneof![9 => 0..CLASSES as u8, 1 => Just(255u8)]
}

fn map_pair() -> impl Strategy<Value = (LabelMap, LabelMap)> {
    (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
        let n = (w * h) as usize;
        (prop::collection::vec(pixel(), n), prop::collection::vec(pixel(), n))
            .prop_map(move |(a, b)| (LabelMap::new(w, h, a).unwrap(), LabelMap::new(w, h, b).unwrap()))
    })
}

fn pair_matrix(n: usize) -> impl Strategy<Value = PairMatrix<f64>> {
    prop::collection::vec(0.05f64..20.0, n * n).prop_map(move |mut v| {
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        let ids = (0..n).map(|i| format!("m{i}")).collect();
        PairMatrix::from_rows(ids, v, MatrixKind::Aggressiveness).unwrap()
    })
}

fn diffs(mu: &[f64]) -> Vec<f64> {
    mu.iter().map(|m| m - mu[0]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metrics_match_oracle((a, b) in map_pair()) {
        let cat = catalog();
        for metric in MetricKind::ALL {
            match (concordance::<f64>(&a, &b, metric, &cat), brute_force_metric(&a, &b, metric, &cat)) {
                (Ok(x), Ok(y)) => {
                    prop_assert!((x - y).abs() <= 1e-12, "{metric}: {x} vs {y}");
                    prop_assert!((0.0..=1.0).contains(&x));
                }
                (Err(_), Err(_)) => {}
                (x, y) => prop_assert!(false, "disagreement {x:?} / {y:?}"),
            }
        }
    }

    #[test]
    fn self_concordance_is_one((a, _) in map_pair()) {
        let cat = catalog();
        prop_assume!(a.pixels().iter().any(|&p| p != 255));
        for metric in MetricKind::ALL {
            prop_assert_eq!(concordance::<f64>(&a, &a, metric, &cat).unwrap(), 1.0);
        }
    }

    #[test]
    fn swapping_maps_transposes_confusion((a, b) in map_pair()) {
        let cat = catalog();
        let ab = confusion(&a, &b, &cat).unwrap();
        let ba = confusion(&b, &a, &cat).unwrap();
        prop_assert_eq!(&ab.transpose(), &ba);
        if ab.total() > 0 {
            let x: f64 = ab.miou().unwrap();
            let y: f64 = ba.miou().unwrap();
            prop_assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn proportions_sum_to_one((a, _) in map_pair()) {
        let cat = catalog();
        match class_proportions::<f64>(&a, &cat) {
            Ok(p) => prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12),
            Err(_) => prop_assert!(a.pixels().iter().all(|&v| v == 255)),
        }
    }

    #[test]
    fn zero_rate_corruption_is_identity((a, _) in map_pair(), seed in any::<u64>()) {
        prop_assert_eq!(corrupt(&a, 0.0, CLASSES, seed, "x"), a.clone());
        let c = corrupt(&a, 0.3, CLASSES, seed, "x");
        for (p, q) in a.pixels().iter().zip(c.pixels()) {
            if *p == 255 { prop_assert_eq!(*q, 255); } else { prop_assert!((*q as usize) < CLASSES); }
        }
    }

    #[test]
    fn gradient_matches_finite_differences(m in pair_matrix(4), mu in prop::collection::vec(-2.0f64..2.0, 4)) {
        let floor = 1e-12;
        let g = gradient(&m, &mu, floor);
        for k in 0..4 {
            let h = 1e-5;
            let mut up = mu.clone();
            let mut dn = mu.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (log_likelihood(&m, &up, floor) - log_likelihood(&m, &dn, floor)) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0), "{k}: {fd} vs {}", g[k]);
        }
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn gauges_differ_by_a_shift(m in pair_matrix(4)) {
        let base = mle_rank(&m, &RankingConfig::default()).unwrap();
        prop_assert!(base.mu.iter().sum::<f64>().abs() < 1e-9);
        for gauge in [Gauge::FirstZero, Gauge::UnitSum] {
            let cfg = RankingConfig { gauge, ..RankingConfig::default() };
            let r = mle_rank(&m, &cfg).unwrap();
            for (x, y) in diffs(&base.mu).iter().zip(diffs(&r.mu)) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn two_model_closed_form(a in 0.05f64..50.0, b in 0.05f64..50.0) {
        let m = PairMatrix::from_rows(vec!["x".into(), "y".into()], vec![1.0, a, b, 1.0], MatrixKind::Resistance).unwrap();
        let r = mle_rank(&m, &RankingConfig::default()).unwrap();
        // stationarity: a * Phi(-d) = b * Phi(d)
        let expected = Normal::standard().inverse_cdf(a / (a + b));
        prop_assert!((r.mu[0] - r.mu[1] - expected).abs() < 1e-6, "{} vs {expected}", r.mu[0] - r.mu[1]);
    }

    #[test]
    fn mle_is_permutation_equivariant(m in pair_matrix(4), shift in 1usize..4) {
        let perm: Vec<usize> = (0..4).map(|i| (i + shift) % 4).collect();
        let p = m.permuted(&perm);
        let r0 = mle_rank(&m, &RankingConfig::default()).unwrap();
        let r1 = mle_rank(&p, &RankingConfig::default()).unwrap();
        for id in m.model_ids() {
            prop_assert!((r0.score_of(id).unwrap() - r1.score_of(id).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn stronger_row_raises_score(m in pair_matrix(3), boost in 1.5f64..4.0) {
        let mut up = m.clone();
        for c in 1..3 {
            up.set(0, c, m.get(0, c) * boost);
        }
        let r0 = mle_rank(&m, &RankingConfig::default()).unwrap();
        let r1 = mle_rank(&up, &RankingConfig::default()).unwrap();
        prop_assert!(r1.mu[0] - r1.mu[1] > r0.mu[0] - r0.mu[1]);
        prop_assert!(r1.mu[0] - r1.mu[2] > r0.mu[0] - r0.mu[2]);
    }

    #[test]
    fn srcc_of_monotone_map_is_one(v in prop::collection::vec(-100.0f64..100.0, 2..20)) {
        prop_assume!(v.iter().any(|x| *x != v[0]));
        let w: Vec<f64> = v.iter().map(|x| x.powi(3) + 2.0).collect();
        prop_assert!((srcc(&v, &w).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        prop_assert!((srcc(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn outcome_cases_partition(d in 0.0f64..1.0, a in 0.0f64..1.0, t in 0.0f64..1.0) {
        let case = classify_outcome(d, a, t);
        let fails = usize::from(d < t) + usize::from(a < t);
        let expected = [OutcomeCase::BothGood, OutcomeCase::OneFails, OutcomeCase::BothFail][fails];
        prop_assert_eq!(case, expected);
    }
}

fn random_instance(seed: u64, images: usize) -> (Vec<PredictionStore>, Corpus, ClassCatalog) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let cat = catalog();
    let ids: Vec<String> = (0..images).map(|k| format!("i{k:03}")).collect();
    let stores = (0..3)
        .map(|m| {
            let maps: BTreeMap<String, LabelMap> = ids
                .iter()
                .map(|id| {
                    // few pixels so ties and absent categories are common
                    let px = (0..6).map(|_| rng.random_range(0..CLASSES as u8)).collect();
                    (id.clone(), LabelMap::new(3, 2, px).unwrap())
                })
                .collect();
            PredictionStore::in_memory(format!("model{m}"), maps)
        })
        .collect();
    (stores, Corpus::from_ids(ids).unwrap(), cat)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn selection_equals_exhaustive_search(
        seed in any::<u64>(),
        images in 1usize..40,
        k in 1usize..3,
        metric in prop::sample::select(MetricKind::ALL.to_vec()),
        source in prop::sample::select(vec![ScaleSource::Defender, ScaleSource::Attacker, ScaleSource::Both]),
        bounded in any::<bool>(),
    ) {
        let (stores, corpus, cat) = random_instance(seed, images);
        let stats = if bounded {
            let b = Some(ScaleBounds { t_min: 1.0 / 6.0, t_max: 0.5 });
            ScaleStats::from_bounds(vec![None, b, b, None, b]).unwrap()
        } else {
            ScaleStats::unconstrained(&cat)
        };
        let cfg = SelectionConfig { metric, k, scale_source: source };
        let fast = run_pairwise_selection(&stores, &corpus, &cat, &stats, &cfg).unwrap();
        let slow = brute_force_select(&stores, &corpus, &cat, &stats, &cfg).unwrap();
        prop_assert_eq!(&fast, &slow);
        prop_assert!(fast.records().len() <= 3 * 2 * (CLASSES - 1) * k);
        prop_assert_eq!(run_pairwise_selection(&stores, &corpus, &cat, &stats, &cfg).unwrap(), fast.clone());

        if !fast.is_empty() {
            let mut table = ScoreTable::<f64>::default();
            for s in &stores {
                for img in fast.images() {
                    table.insert(s.model_id(), img, (img.len() % 3) as f64 / 2.0);
                }
            }
            let (total, per_pair) = tally_outcomes(&fast, &table, 0.6).unwrap();
            prop_assert_eq!(total.total(), fast.records().len());
            prop_assert_eq!(per_pair.values().map(|t| t.total()).sum::<usize>(), fast.records().len());
            for model in fast.models() {
                let (u, v) = split_subsets(&fast, model).unwrap();
                prop_assert!(u.is_disjoint(&v));
                prop_assert_eq!(u.len() + v.len(), fast.images().len());
            }
        }
    }
}
