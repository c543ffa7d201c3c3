//! Maximum-discrepancy image selection.
//!
//! For every ordered (defender, attacker) pair the corpus is split into
//! overlapping per-category groups by the defender's prediction, each group is
//! filtered by object scale, and the `K` images with the lowest concordance
//! between the two predictions are kept.

mod madset;
mod scale;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::segmap::{class_counts, confusion, ClassCatalog, ClassId, MetricKind, SegError};
use crate::store::{PredictionStore, StoreError};

pub use madset::{assemble_annotation_batch, MadSet, SelectionRecord};
pub use scale::{compute_scale_stats, quantile_linear, ScaleBounds, ScaleSource, ScaleStats};

#[derive(Debug, thiserror::Error)]
pub enum SelectionError {
    #[error(transparent)]
    Seg(#[from] SegError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("concordance of model `{model}` on image `{image}`: {source}")]
    Score {
        model: String,
        image: String,
        #[source]
        source: SegError,
    },
    #[error("at least two models are required, got {0}")]
    TooFewModels(usize),
    #[error("duplicate model id `{0}`")]
    DuplicateModel(String),
    #[error("duplicate image id `{0}` in corpus")]
    DuplicateImage(String),
    #[error("K must be at least 1")]
    InvalidK,
    #[error("MAD set is empty")]
    EmptyMadSet,
    #[error("labeled set is empty")]
    EmptyLabeledSet,
    #[error("scale statistics: {0}")]
    Stats(String),
    #[error("{0}")]
    Config(String),
    #[error("MAD set line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An unlabeled corpus image.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: String,
    pub path: PathBuf,
}

/// Corpus images ordered by `image_id`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    images: Vec<ImageRef>,
}

impl Corpus {
    pub fn new(mut images: Vec<ImageRef>) -> Result<Self, SelectionError> {
        images.sort();
        for w in images.windows(2) {
            if w[0].image_id == w[1].image_id {
                return Err(SelectionError::DuplicateImage(w[0].image_id.clone()));
            }
        }
        Ok(Corpus { images })
    }

    /// Corpus of bare ids with `<id>.png` paths.
    pub fn from_ids<I, S>(ids: I) -> Result<Self, SelectionError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Corpus::new(
            ids.into_iter()
                .map(|id| {
                    let image_id = id.into();
                    let path = PathBuf::from(format!("{image_id}.png"));
                    ImageRef { image_id, path }
                })
                .collect(),
        )
    }

    pub fn images(&self) -> &[ImageRef] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRef> {
        self.images
            .binary_search_by(|r| r.image_id.as_str().cmp(image_id))
            .ok()
            .map(|i| &self.images[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionConfig {
    pub metric: MetricKind,
    pub k: usize,
    pub scale_source: ScaleSource,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            metric: MetricKind::Miou,
            k: 1,
            scale_source: ScaleSource::Defender,
        }
    }
}

/// Everything selection needs to know about one image: per-model class
/// proportions and the concordance of each requested ordered pair.
#[derive(Debug, Clone)]
struct ImageScan {
    image_id: String,
    /// `proportions[model][class]`; all zero when a prediction is fully ignored.
    proportions: Vec<Vec<f64>>,
    /// `scores[pair index]`, aligned with the pair list given to the scan.
    scores: Vec<f64>,
}

fn scan_image(
    image_id: &str,
    stores: &[PredictionStore],
    pairs: &[(usize, usize)],
    catalog: &ClassCatalog,
    metric: MetricKind,
) -> Result<ImageScan, SelectionError> {
    let mut involved = vec![false; stores.len()];
    for &(d, a) in pairs {
        involved[d] = true;
        involved[a] = true;
    }
    let mut preds = Vec::with_capacity(stores.len());
    let mut proportions = Vec::with_capacity(stores.len());
    for (store, &needed) in stores.iter().zip(&involved) {
        if !needed {
            preds.push(None);
            proportions.push(Vec::new());
            continue;
        }
        let p = store.prediction(image_id)?;
        let (counts, valid) = class_counts(&p, catalog)?;
        proportions.push(
            counts
                .iter()
                .map(|&c| if valid == 0 { 0.0 } else { c as f64 / valid as f64 })
                .collect(),
        );
        preds.push(Some(p));
    }

    let mut scores = vec![f64::NAN; pairs.len()];
    for (idx, &(d, a)) in pairs.iter().enumerate() {
        // symmetric metrics reuse the reverse pair's score when already computed
        if metric.is_symmetric() {
            if let Some(prev) = pairs[..idx].iter().position(|&(pd, pa)| pd == a && pa == d) {
                scores[idx] = scores[prev];
                continue;
            }
        }
        let (pd, pa) = (preds[d].as_ref().unwrap(), preds[a].as_ref().unwrap());
        let cm = confusion(pd, pa, catalog).map_err(|source| SelectionError::Score {
            model: stores[d].model_id().to_string(),
            image: image_id.to_string(),
            source,
        })?;
        scores[idx] = cm.score::<f64>(metric).map_err(|source| SelectionError::Score {
            model: stores[d].model_id().to_string(),
            image: image_id.to_string(),
            source,
        })?;
    }
    Ok(ImageScan {
        image_id: image_id.to_string(),
        proportions,
        scores,
    })
}

fn validate_stores(stores: &[PredictionStore]) -> Result<(), SelectionError> {
    if stores.len() < 2 {
        return Err(SelectionError::TooFewModels(stores.len()));
    }
    let mut seen = BTreeSet::new();
    for s in stores {
        if !seen.insert(s.model_id()) {
            return Err(SelectionError::DuplicateModel(s.model_id().to_string()));
        }
    }
    Ok(())
}

/// Every ordered pair `(defender, attacker)` with `defender != attacker`,
/// defender-major.
pub fn all_ordered_pairs(models: usize) -> Vec<(usize, usize)> {
    (0..models)
        .flat_map(|d| (0..models).filter(move |&a| a != d).map(move |a| (d, a)))
        .collect()
}

/// Lowest-concordance selection for a given list of ordered pairs.
///
/// The per-image scan runs on the current rayon pool; the reduction and the
/// selection itself are sequential, so the output does not depend on the
/// number of threads.
pub fn select_pairs(
    stores: &[PredictionStore],
    pairs: &[(usize, usize)],
    corpus: &Corpus,
    catalog: &ClassCatalog,
    stats: &ScaleStats,
    cfg: &SelectionConfig,
) -> Result<MadSet, SelectionError> {
    validate_stores(stores)?;
    if cfg.k == 0 {
        return Err(SelectionError::InvalidK);
    }
    let scans: Vec<ImageScan> = corpus
        .images()
        .par_iter()
        .map(|img| scan_image(&img.image_id, stores, pairs, catalog, cfg.metric))
        .collect::<Result<_, _>>()?;

    let mut records = Vec::new();
    for (pair_idx, &(d, a)) in pairs.iter().enumerate() {
        for y in catalog.object_ids() {
            let filtered: Vec<Candidate<'_>> = scans
                .iter()
                .filter(|s| s.proportions[d][usize::from(y)] > 0.0)
                .filter(|s| passes_scale(s, d, a, y, stats, cfg.scale_source))
                .map(|s| Candidate {
                    image_id: &s.image_id,
                    score: s.scores[pair_idx],
                })
                .collect();
            records.extend(
                select_topk(filtered, cfg.k)
                    .into_iter()
                    .enumerate()
                    .map(|(rank, c)| SelectionRecord {
                        image_id: c.image_id.to_string(),
                        defender: stores[d].model_id().to_string(),
                        attacker: stores[a].model_id().to_string(),
                        category: y,
                        concordance: c.score,
                        metric: cfg.metric,
                        rank_in_group: rank as u32 + 1,
                    }),
            );
        }
    }
    Ok(MadSet::from_records(records))
}

/// Runs selection over all `J (J - 1)` ordered pairs.
pub fn run_pairwise_selection(
    stores: &[PredictionStore],
    corpus: &Corpus,
    catalog: &ClassCatalog,
    stats: &ScaleStats,
    cfg: &SelectionConfig,
) -> Result<MadSet, SelectionError> {
    select_pairs(stores, &all_ordered_pairs(stores.len()), corpus, catalog, stats, cfg)
}

fn passes_scale(
    s: &ImageScan,
    defender: usize,
    attacker: usize,
    y: ClassId,
    stats: &ScaleStats,
    source: ScaleSource,
) -> bool {
    let prop = |m: usize| s.proportions[m][usize::from(y)];
    match source {
        ScaleSource::Defender => stats.admits(y, prop(defender)),
        ScaleSource::Attacker => stats.admits(y, prop(attacker)),
        ScaleSource::Both => stats.admits(y, prop(defender)) && stats.admits(y, prop(attacker)),
    }
}

/// A scored member of a filtered group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate<'a> {
    pub image_id: &'a str,
    pub score: f64,
}

/// The `k` lowest-scoring candidates, ties broken by ascending image id.
pub fn select_topk(mut group: Vec<Candidate<'_>>, k: usize) -> Vec<Candidate<'_>> {
    group.sort_by(|x, y| match x.score.total_cmp(&y.score) {
        Ordering::Equal => x.image_id.cmp(y.image_id),
        o => o,
    });
    group.truncate(k);
    group
}

/// Images of `group` whose defender-predicted proportion of `category` passes
/// the scale bounds.
pub fn scale_filter<'a>(
    group: &[&'a str],
    defender: &PredictionStore,
    category: ClassId,
    catalog: &ClassCatalog,
    stats: &ScaleStats,
) -> Result<Vec<&'a str>, SelectionError> {
    let mut kept = Vec::new();
    for &id in group {
        let (counts, valid) = class_counts(&*defender.prediction(id)?, catalog)?;
        let p = if valid == 0 {
            0.0
        } else {
            counts[usize::from(category)] as f64 / valid as f64
        };
        if stats.admits(category, p) {
            kept.push(id);
        }
    }
    Ok(kept)
}

/// Per-category groups induced by the defender's predictions: image `x`
/// belongs to group `y` when at least one predicted pixel has class `y`.
/// Background forms no group; index 0 of the result is always empty.
pub fn group_by_defender(
    defender: &PredictionStore,
    corpus: &Corpus,
    catalog: &ClassCatalog,
) -> Result<Vec<Vec<String>>, SelectionError> {
    let mut groups = vec![Vec::new(); catalog.num_classes()];
    for img in corpus.images() {
        let (counts, _) = class_counts(&*defender.prediction(&img.image_id)?, catalog)?;
        for y in catalog.object_ids() {
            if counts[usize::from(y)] > 0 {
                groups[usize::from(y)].push(img.image_id.clone());
            }
        }
    }
    Ok(groups)
}
