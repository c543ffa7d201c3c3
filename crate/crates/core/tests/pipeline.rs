//! Whole-competition runs on in-memory synthetic data.

use mad_core::ranking::{add_model, matrices_from_truth, mle_rank, srcc};
use mad_core::selection::{compute_scale_stats, run_pairwise_selection};
use mad_core::synth::{SynthCompetition, SynthConfig};
use mad_core::{AnnotationStore, LabelMapStore, PredictionStore, RankingConfig, SelectionConfig};

fn config(rates: &[f64]) -> SynthConfig {
    SynthConfig {
        seed: 11,
        n_images: 150,
        n_train: 60,
        width: 48,
        height: 48,
        noise_rates: rates.to_vec(),
        ..SynthConfig::default()
    }
}

fn truth(comp: &SynthCompetition) -> AnnotationStore {
    LabelMapStore::in_memory("truth", comp.truth.clone())
}

#[test]
fn rankings_follow_noise_order() {
    let comp = SynthCompetition::build(&config(&[0.05, 0.2, 0.35, 0.5])).unwrap();
    let stores = comp.stores();
    let stats = compute_scale_stats(&comp.labeled_train, &comp.catalog).unwrap();
    let sel = SelectionConfig::default();
    let mad = run_pairwise_selection(&stores, &comp.corpus, &comp.catalog, &stats, &sel).unwrap();
    assert!(mad.records().len() <= 4 * 3 * comp.catalog.num_objects());

    let cfg = RankingConfig::<f64>::default();
    let m = matrices_from_truth(&stores, &mad, &truth(&comp), sel.metric, &comp.catalog, &cfg).unwrap();
    let noise: Vec<f64> = comp.models.iter().map(|(_, r, _)| -r).collect();
    for matrix in [&m.aggressiveness, &m.resistance] {
        let r = mle_rank(matrix, &cfg).unwrap();
        assert_eq!(r.order(), vec!["m1", "m2", "m3", "m4"]);
        assert_eq!(srcc(&r.mu, &noise).unwrap(), 1.0);
    }
}

#[test]
fn f32_pipeline_agrees_on_order() {
    let comp = SynthCompetition::build(&config(&[0.05, 0.25, 0.45])).unwrap();
    let stores = comp.stores();
    let stats = compute_scale_stats(&comp.labeled_train, &comp.catalog).unwrap();
    let sel = SelectionConfig::default();
    let mad = run_pairwise_selection(&stores, &comp.corpus, &comp.catalog, &stats, &sel).unwrap();
    let cfg = RankingConfig::<f32>::default();
    let m = matrices_from_truth(&stores, &mad, &truth(&comp), sel.metric, &comp.catalog, &cfg).unwrap();
    assert_eq!(
        mle_rank(&m.aggressiveness, &cfg).unwrap().order(),
        vec!["m1", "m2", "m3"]
    );
}

#[test]
fn new_model_leaves_existing_entries_untouched() {
    let comp = SynthCompetition::build(&config(&[0.05, 0.15, 0.3, 0.45, 0.1])).unwrap();
    let all = comp.stores();
    let (incumbents, newcomer): (Vec<PredictionStore>, PredictionStore) = (all[..4].to_vec(), all[4].clone());
    let stats = compute_scale_stats(&comp.labeled_train, &comp.catalog).unwrap();
    let sel = SelectionConfig::default();
    let cfg = RankingConfig::<f64>::default();
    let gt = truth(&comp);

    let mad = run_pairwise_selection(&incumbents, &comp.corpus, &comp.catalog, &stats, &sel).unwrap();
    let before = matrices_from_truth(&incumbents, &mad, &gt, sel.metric, &comp.catalog, &cfg).unwrap();
    let added = add_model(
        &before.aggressiveness,
        &before.resistance,
        &incumbents,
        &newcomer,
        &comp.corpus,
        &comp.catalog,
        &stats,
        &sel,
        &gt,
        &cfg,
    )
    .unwrap();

    for (old, new) in [
        (&before.aggressiveness, &added.matrices.aggressiveness),
        (&before.resistance, &added.matrices.resistance),
    ] {
        assert_eq!(new.len(), 5);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(old.get(i, j).to_bits(), new.get(i, j).to_bits());
            }
        }
    }
    // the newcomer (rate 0.1) sits between m1 and m2
    assert_eq!(added.aggressiveness.order(), vec!["m1", "m5", "m2", "m3", "m4"]);
    assert_eq!(added.resistance.order(), vec!["m1", "m5", "m2", "m3", "m4"]);
    assert!(added
        .new_records
        .records()
        .iter()
        .all(|r| r.defender == "m5" || r.attacker == "m5"));
}

#[test]
fn missing_annotations_are_listed() {
    let comp = SynthCompetition::build(&config(&[0.05, 0.3])).unwrap();
    let stores = comp.stores();
    let stats = compute_scale_stats(&comp.labeled_train, &comp.catalog).unwrap();
    let mad = run_pairwise_selection(
        &stores,
        &comp.corpus,
        &comp.catalog,
        &stats,
        &SelectionConfig::default(),
    )
    .unwrap();
    let partial = LabelMapStore::in_memory("truth", Default::default());
    let err = matrices_from_truth(
        &stores,
        &mad,
        &partial,
        Default::default(),
        &comp.catalog,
        &RankingConfig::<f64>::default(),
    )
    .unwrap_err();
    match err {
        mad_core::ranking::RankingError::MissingAnnotations(ids) => {
            assert_eq!(ids.len(), mad.images().len());
        }
        other => panic!("unexpected {other}"),
    }
}
