use std::path::Path;

use mad_annotate::{Session, SessionConfig};
use mad_core::selection::{compute_scale_stats, run_pairwise_selection};
use mad_core::synth::{SynthCompetition, SynthConfig};
use mad_core::{ClassCatalog, MadSet, PredictionStore, SelectionConfig};

pub const MODELS: [&str; 3] = ["alpha-net", "beta-net", "gamma-net"];

pub struct Fixture {
    pub mad: MadSet,
    pub catalog: ClassCatalog,
    pub stores: Vec<PredictionStore>,
}

pub fn fixture() -> Fixture {
    let cfg = SynthConfig {
        seed: 3,
        n_images: 60,
        n_train: 30,
        width: 24,
        height: 24,
        noise_rates: vec![0.05, 0.25, 0.45],
        ..SynthConfig::default()
    };
    let comp = SynthCompetition::build(&cfg).unwrap();
    let stores: Vec<PredictionStore> = comp
        .models
        .iter()
        .zip(MODELS)
        .map(|((_, _, preds), name)| PredictionStore::in_memory(name, preds.clone()))
        .collect();
    let stats = compute_scale_stats(&comp.labeled_train, &comp.catalog).unwrap();
    let mad = run_pairwise_selection(
        &stores,
        &comp.corpus,
        &comp.catalog,
        &stats,
        &SelectionConfig::default(),
    )
    .unwrap();
    Fixture {
        mad,
        catalog: comp.catalog,
        stores,
    }
}

impl Fixture {
    pub fn open(&self, log: &Path, config: SessionConfig) -> Session {
        Session::open(
            self.mad.clone(),
            self.catalog.clone(),
            self.stores.clone(),
            None,
            log,
            config,
        )
        .unwrap()
    }
}
