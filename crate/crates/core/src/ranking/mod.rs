//! Pairwise aggressiveness/resistance and global rankings.
//!
//! `a_ij` compares model `i` with model `j` on the images `i` selected while
//! attacking `j` (defender `j`); `r_ij` compares them on the images where `i`
//! defended against `j`. Both are ratios of ground-truth performance with
//! additive smoothing, and each matrix is aggregated into global scores by
//! [`mle_rank`].

mod incremental;
mod matrix;
mod mle;
mod twoafc;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::segmap::{confusion, ClassCatalog, ClassId, MetricKind, SegError};
use crate::selection::{MadSet, SelectionError, SelectionRecord};
use crate::store::{AnnotationStore, PredictionStore, StoreError};

pub use incremental::{add_model, expand_matrices, select_for_new_model, ModelAddition};
pub use matrix::{MatrixKind, PairMatrix};
pub use mle::{gradient, log_likelihood, mle_rank, Gauge, RankedModel, RankingConfig, RankingVector};
pub use twoafc::{pairwise_from_2afc, TWO_AFC_SMOOTHING};

#[derive(Debug, thiserror::Error)]
pub enum RankingError {
    #[error(transparent)]
    Seg(#[from] SegError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("scoring model `{model}` on image `{image}`: {source}")]
    Score {
        model: String,
        image: String,
        #[source]
        source: SegError,
    },
    #[error("missing ground truth for {} image(s): {}", .0.len(), .0.join(", "))]
    MissingAnnotations(Vec<String>),
    #[error("performance over an empty subset is undefined")]
    EmptySubset,
    #[error("no score for model `{model}` on image `{image}`")]
    MissingScore { model: String, image: String },
    #[error("model `{0}` does not take part in the competition")]
    UnknownModel(String),
    #[error("entry ({row}, {col}) = {value} is not a finite nonnegative number")]
    InvalidEntry { row: String, col: String, value: f64 },
    #[error("at least two models are required, got {0}")]
    TooFewModels(usize),
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },
    #[error("rank correlation: {0}")]
    Correlation(String),
    #[error("matrix shape: {0}")]
    Shape(String),
    #[error("{0}")]
    Config(String),
    #[error("choice log: {0}")]
    Choice(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ground-truth concordance of each model on each scored image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable<T> {
    scores: BTreeMap<String, BTreeMap<String, T>>,
}

impl<T: Scalar> ScoreTable<T> {
    /// Scores `metric(prediction, truth)` for every model on every image of `images`.
    pub fn compute<'a, I>(
        stores: &[PredictionStore],
        images: I,
        truth: &AnnotationStore,
        metric: MetricKind,
        catalog: &ClassCatalog,
    ) -> Result<Self, RankingError>
    where
        I: IntoIterator<Item = &'a String>,
    {
        let images: Vec<&String> = images.into_iter().collect();
        let missing: Vec<String> = images
            .iter()
            .filter(|i| !truth.contains(i))
            .map(|i| i.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(RankingError::MissingAnnotations(missing));
        }
        let rows: Vec<Vec<T>> = images
            .par_iter()
            .map(|image| {
                let gt = truth.get(image)?;
                stores
                    .iter()
                    .map(|s| {
                        let pred = s.prediction(image)?;
                        confusion(&pred, &gt, catalog)
                            .and_then(|cm| cm.score::<T>(metric))
                            .map_err(|source| RankingError::Score {
                                model: s.model_id().to_string(),
                                image: image.to_string(),
                                source,
                            })
                    })
                    .collect::<Result<Vec<T>, RankingError>>()
            })
            .collect::<Result<_, _>>()?;
        let mut table = ScoreTable::default();
        for (image, row) in images.iter().zip(rows) {
            for (s, v) in stores.iter().zip(row) {
                table.insert(s.model_id(), image, v);
            }
        }
        Ok(table)
    }

    pub fn insert(&mut self, model: &str, image: &str, score: T) {
        self.scores
            .entry(model.to_string())
            .or_default()
            .insert(image.to_string(), score);
    }

    pub fn get(&self, model: &str, image: &str) -> Result<T, RankingError> {
        self.scores
            .get(model)
            .and_then(|m| m.get(image))
            .copied()
            .ok_or_else(|| RankingError::MissingScore {
                model: model.to_string(),
                image: image.to_string(),
            })
    }

    pub fn merge(&mut self, other: ScoreTable<T>) {
        for (model, images) in other.scores {
            self.scores.entry(model).or_default().extend(images);
        }
    }
}

/// Mean over categories of the per-category mean score. Categories without
/// records do not enter the outer mean.
pub fn perf_from_scores<'a, T, I, F>(subset: I, mut score: F) -> Result<T, RankingError>
where
    T: Scalar,
    I: IntoIterator<Item = &'a SelectionRecord>,
    F: FnMut(&str) -> Result<T, RankingError>,
{
    let mut per_category: BTreeMap<ClassId, (T, u64)> = BTreeMap::new();
    for r in subset {
        let s = score(&r.image_id)?;
        let e = per_category.entry(r.category).or_insert((T::zero(), 0));
        e.0 = e.0 + s;
        e.1 += 1;
    }
    if per_category.is_empty() {
        return Err(RankingError::EmptySubset);
    }
    let n = T::from_count(per_category.len() as u64);
    Ok(per_category
        .values()
        .map(|&(sum, count)| sum / T::from_count(count))
        .sum::<T>()
        / n)
}

/// Performance of `model` on a subset of MAD records against dense ground truth.
pub fn perf<'a, T: Scalar>(
    model: &PredictionStore,
    subset: impl IntoIterator<Item = &'a SelectionRecord>,
    truth: &AnnotationStore,
    metric: MetricKind,
    catalog: &ClassCatalog,
) -> Result<T, RankingError> {
    perf_from_scores(subset, |image| {
        let gt = truth.get(image).map_err(|e| match e {
            StoreError::Missing { .. } => RankingError::MissingAnnotations(vec![image.to_string()]),
            other => other.into(),
        })?;
        let pred = model.prediction(image)?;
        confusion(&pred, &gt, catalog)
            .and_then(|cm| cm.score(metric))
            .map_err(|source| RankingError::Score {
                model: model.model_id().to_string(),
                image: image.to_string(),
                source,
            })
    })
}

/// Smoothed performance ratio `(p_i + eps) / (p_j + eps)`.
pub fn smoothed_ratio<T: Scalar>(p_i: T, p_j: T, eps: T) -> Option<T> {
    let v = (p_i + eps) / (p_j + eps);
    (v.is_finite() && v >= T::zero()).then_some(v)
}

/// A pair whose MAD subset was empty; its entry defaults to 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageWarning {
    pub matrix: MatrixKind,
    pub row: String,
    pub col: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompetitionMatrices<T> {
    pub aggressiveness: PairMatrix<T>,
    pub resistance: PairMatrix<T>,
    pub warnings: Vec<CoverageWarning>,
}

/// Ratio entry on the records of `defender` vs `attacker`, comparing `num`
/// to `den`. `None` when the subset is empty.
fn entry<T: Scalar>(
    mad: &MadSet,
    defender: &str,
    attacker: &str,
    num: &str,
    den: &str,
    table: &ScoreTable<T>,
    eps: T,
) -> Result<Option<T>, RankingError> {
    let subset: Vec<&SelectionRecord> = mad.subset(defender, attacker).collect();
    if subset.is_empty() {
        return Ok(None);
    }
    let p_num = perf_from_scores(subset.iter().copied(), |img| table.get(num, img))?;
    let p_den = perf_from_scores(subset.iter().copied(), |img| table.get(den, img))?;
    smoothed_ratio(p_num, p_den, eps)
        .map(Some)
        .ok_or_else(|| RankingError::InvalidEntry {
            row: num.to_string(),
            col: den.to_string(),
            value: ((p_num + eps) / (p_den + eps)).as_f64(),
        })
}

/// Fills `a[i][j]` and `r[i][j]` for one ordered pair of indices.
pub(crate) fn fill_pair<T: Scalar>(
    out: &mut CompetitionMatrices<T>,
    i: usize,
    j: usize,
    mad: &MadSet,
    table: &ScoreTable<T>,
    eps: T,
) -> Result<(), RankingError> {
    let mi = out.aggressiveness.model_ids()[i].clone();
    let mj = out.aggressiveness.model_ids()[j].clone();
    // aggressiveness: i attacks, j defends
    match entry(mad, &mj, &mi, &mi, &mj, table, eps)? {
        Some(v) => out.aggressiveness.set(i, j, v),
        None => {
            out.aggressiveness.set(i, j, T::one());
            out.warnings.push(CoverageWarning {
                matrix: MatrixKind::Aggressiveness,
                row: mi.clone(),
                col: mj.clone(),
            });
        }
    }
    // resistance: i defends, j attacks
    match entry(mad, &mi, &mj, &mi, &mj, table, eps)? {
        Some(v) => out.resistance.set(i, j, v),
        None => {
            out.resistance.set(i, j, T::one());
            out.warnings.push(CoverageWarning {
                matrix: MatrixKind::Resistance,
                row: mi,
                col: mj,
            });
        }
    }
    Ok(())
}

/// Full aggressiveness and resistance matrices over `model_ids`.
pub fn competition_matrices<T: Scalar>(
    model_ids: &[String],
    mad: &MadSet,
    table: &ScoreTable<T>,
    eps: T,
) -> Result<CompetitionMatrices<T>, RankingError> {
    let mut out = CompetitionMatrices {
        aggressiveness: PairMatrix::identity(model_ids.to_vec(), MatrixKind::Aggressiveness),
        resistance: PairMatrix::identity(model_ids.to_vec(), MatrixKind::Resistance),
        warnings: Vec::new(),
    };
    for i in 0..model_ids.len() {
        for j in 0..model_ids.len() {
            if i != j {
                fill_pair(&mut out, i, j, mad, table, eps)?;
            }
        }
    }
    for w in &out.warnings {
        log::warn!(
            "{} entry ({}, {}) has no selected images; set to 1",
            w.matrix,
            w.row,
            w.col
        );
    }
    Ok(out)
}

/// Aggressiveness matrix from dense annotations.
pub fn aggressiveness_matrix<T: Scalar>(
    stores: &[PredictionStore],
    mad: &MadSet,
    truth: &AnnotationStore,
    metric: MetricKind,
    catalog: &ClassCatalog,
    cfg: &RankingConfig<T>,
) -> Result<(PairMatrix<T>, Vec<CoverageWarning>), RankingError> {
    let m = matrices_from_truth(stores, mad, truth, metric, catalog, cfg)?;
    let w = m
        .warnings
        .into_iter()
        .filter(|w| w.matrix == MatrixKind::Aggressiveness)
        .collect();
    Ok((m.aggressiveness, w))
}

/// Resistance matrix from dense annotations.
pub fn resistance_matrix<T: Scalar>(
    stores: &[PredictionStore],
    mad: &MadSet,
    truth: &AnnotationStore,
    metric: MetricKind,
    catalog: &ClassCatalog,
    cfg: &RankingConfig<T>,
) -> Result<(PairMatrix<T>, Vec<CoverageWarning>), RankingError> {
    let m = matrices_from_truth(stores, mad, truth, metric, catalog, cfg)?;
    let w = m
        .warnings
        .into_iter()
        .filter(|w| w.matrix == MatrixKind::Resistance)
        .collect();
    Ok((m.resistance, w))
}

pub fn matrices_from_truth<T: Scalar>(
    stores: &[PredictionStore],
    mad: &MadSet,
    truth: &AnnotationStore,
    metric: MetricKind,
    catalog: &ClassCatalog,
    cfg: &RankingConfig<T>,
) -> Result<CompetitionMatrices<T>, RankingError> {
    cfg.validate()?;
    let table = ScoreTable::compute(stores, mad.images(), truth, metric, catalog)?;
    let ids: Vec<String> = stores.iter().map(|s| s.model_id().to_string()).collect();
    competition_matrices(&ids, mad, &table, cfg.epsilon)
}

/// Outcome of a MAD image once both competitors are scored against truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeCase {
    BothGood,
    OneFails,
    BothFail,
}

pub const DEFAULT_FAILURE_THRESHOLD: f64 = 0.6;

/// A score below `threshold` counts as a failure.
pub fn classify_outcome<T: Scalar>(defender_score: T, attacker_score: T, threshold: T) -> OutcomeCase {
    match (defender_score >= threshold, attacker_score >= threshold) {
        (true, true) => OutcomeCase::BothGood,
        (false, false) => OutcomeCase::BothFail,
        _ => OutcomeCase::OneFails,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeTally {
    pub both_good: usize,
    pub one_fails: usize,
    pub both_fail: usize,
}

impl OutcomeTally {
    pub fn add(&mut self, case: OutcomeCase) {
        match case {
            OutcomeCase::BothGood => self.both_good += 1,
            OutcomeCase::OneFails => self.one_fails += 1,
            OutcomeCase::BothFail => self.both_fail += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.both_good + self.one_fails + self.both_fail
    }
}

/// Outcome tallies keyed by `(defender, attacker)`.
pub type PairTallies = BTreeMap<(String, String), OutcomeTally>;

/// Classifies every MAD record; returns the overall tally and one per
/// `(defender, attacker)` cell.
pub fn tally_outcomes<T: Scalar>(
    mad: &MadSet,
    table: &ScoreTable<T>,
    threshold: T,
) -> Result<(OutcomeTally, PairTallies), RankingError> {
    let mut total = OutcomeTally::default();
    let mut per_pair: BTreeMap<(String, String), OutcomeTally> = BTreeMap::new();
    for r in mad.records() {
        let case = classify_outcome(
            table.get(&r.defender, &r.image_id)?,
            table.get(&r.attacker, &r.image_id)?,
            threshold,
        );
        total.add(case);
        per_pair
            .entry((r.defender.clone(), r.attacker.clone()))
            .or_default()
            .add(case);
    }
    Ok((total, per_pair))
}

/// Images of the MAD set associated with `model` (as defender or attacker)
/// and the remaining images.
pub fn split_subsets(mad: &MadSet, model_id: &str) -> Result<(BTreeSet<String>, BTreeSet<String>), RankingError> {
    let associated: BTreeSet<String> = mad
        .records()
        .iter()
        .filter(|r| r.defender == model_id || r.attacker == model_id)
        .map(|r| r.image_id.clone())
        .collect();
    if associated.is_empty() {
        return Err(RankingError::UnknownModel(model_id.to_string()));
    }
    let rest = mad.images().difference(&associated).cloned().collect();
    Ok((associated, rest))
}

/// Average ranks (1-based); ties share the mean of their positions.
pub fn average_ranks<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![T::zero(); values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start;
        while end + 1 < idx.len() && values[idx[end + 1]] == values[idx[start]] {
            end += 1;
        }
        let avg = T::lit((start + end) as f64 / 2.0 + 1.0);
        for &i in &idx[start..=end] {
            ranks[i] = avg;
        }
        start = end + 1;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn srcc<T: Scalar>(a: &[T], b: &[T]) -> Result<T, RankingError> {
    if a.len() != b.len() {
        return Err(RankingError::Correlation(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(RankingError::Correlation("need at least two entries".into()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = T::from_count(a.len() as u64);
    let ma = ra.iter().copied().sum::<T>() / n;
    let mb = rb.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in ra.iter().zip(&rb) {
        sab = sab + (x - ma) * (y - mb);
        saa = saa + (x - ma) * (x - ma);
        sbb = sbb + (y - mb) * (y - mb);
    }
    if saa == T::zero() || sbb == T::zero() {
        return Err(RankingError::Correlation("constant input".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(image: &str, d: &str, a: &str, category: ClassId) -> SelectionRecord {
        SelectionRecord {
            image_id: image.into(),
            defender: d.into(),
            attacker: a.into(),
            category,
            concordance: 0.1,
            metric: MetricKind::Miou,
            rank_in_group: 1,
        }
    }

    #[test]
    fn perf_nested_means() {
        let recs = [rec("x1", "d", "a", 1), rec("x2", "d", "a", 1), rec("x3", "d", "a", 2)];
        let scores: BTreeMap<&str, f64> = [("x1", 0.2), ("x2", 0.4), ("x3", 0.6)].into_iter().collect();
        let p: f64 = perf_from_scores(&recs, |i| Ok(scores[i])).unwrap();
        assert!((p - 0.45).abs() < 1e-15);
        assert!(matches!(
            perf_from_scores::<f64, _, _>(&[], |_| Ok(1.0)),
            Err(RankingError::EmptySubset)
        ));
    }

    #[test]
    fn ratios() {
        assert_eq!(smoothed_ratio(0.5, 0.25, 0.0), Some(2.0));
        assert_eq!(smoothed_ratio(0.4, 0.4, 1e-6), Some(1.0));
        let v: f64 = smoothed_ratio(0.3, 0.0, 1e-6).unwrap();
        assert!((v - 300_001.0).abs() < 1e-6);
        assert_eq!(smoothed_ratio(0.3, 0.0, 0.0), None);
    }

    fn table(entries: &[(&str, &str, f64)]) -> ScoreTable<f64> {
        let mut t = ScoreTable::default();
        for &(m, i, s) in entries {
            t.insert(m, i, s);
        }
        t
    }

    #[test]
    fn matrices_use_the_right_subsets() {
        // x1: defender f, attacker g. x2: defender g, attacker f.
        let mad = MadSet::from_records(vec![rec("x1", "f", "g", 1), rec("x2", "g", "f", 1)]);
        let t = table(&[("f", "x1", 1.0), ("g", "x1", 0.5), ("f", "x2", 0.2), ("g", "x2", 0.8)]);
        let ids = vec!["f".to_string(), "g".to_string()];
        let m = competition_matrices(&ids, &mad, &t, 0.0).unwrap();
        // a_fg on S_gf = {x2}: 0.2 / 0.8
        assert_eq!(m.aggressiveness.get(0, 1), 0.25);
        // a_gf on S_fg = {x1}: 0.5 / 1.0
        assert_eq!(m.aggressiveness.get(1, 0), 0.5);
        // r_fg on S_fg = {x1}: 1.0 / 0.5
        assert_eq!(m.resistance.get(0, 1), 2.0);
        assert_eq!(m.resistance.get(1, 0), 4.0);
        assert_eq!(m.aggressiveness.get(0, 0), 1.0);
        assert!(m.warnings.is_empty());

        // swapping roles in the MAD set swaps which subset feeds A and R
        let swapped = MadSet::from_records(vec![rec("x1", "g", "f", 1), rec("x2", "f", "g", 1)]);
        let s = competition_matrices(&ids, &swapped, &t, 0.0).unwrap();
        assert_eq!(s.aggressiveness.get(0, 1), 2.0);
        assert_eq!(s.resistance.get(0, 1), 0.25);
    }

    #[test]
    fn empty_cells_default_to_one_with_warning() {
        let mad = MadSet::from_records(vec![rec("x1", "f", "g", 1)]);
        let t = table(&[("f", "x1", 1.0), ("g", "x1", 0.5)]);
        let m = competition_matrices(&["f".into(), "g".into()], &mad, &t, 1e-6).unwrap();
        assert_eq!(m.aggressiveness.get(0, 1), 1.0);
        assert_eq!(m.resistance.get(1, 0), 1.0);
        assert_eq!(m.warnings.len(), 2);
    }

    #[test]
    fn outcome_cases() {
        assert_eq!(classify_outcome(0.9, 0.8, 0.6), OutcomeCase::BothGood);
        assert_eq!(classify_outcome(0.9, 0.2, 0.6), OutcomeCase::OneFails);
        assert_eq!(classify_outcome(0.2, 0.9, 0.6), OutcomeCase::OneFails);
        assert_eq!(classify_outcome(0.3, 0.1, 0.6), OutcomeCase::BothFail);
        assert_eq!(classify_outcome(0.6, 0.6, 0.6), OutcomeCase::BothGood);
    }

    #[test]
    fn subsets_partition_images() {
        let mad = MadSet::from_records(vec![
            rec("x1", "f", "g", 1),
            rec("x2", "g", "h", 1),
            rec("x3", "h", "f", 2),
        ]);
        let (u, v) = split_subsets(&mad, "g").unwrap();
        assert_eq!(u.into_iter().collect::<Vec<_>>(), vec!["x1", "x2"]);
        assert_eq!(v.into_iter().collect::<Vec<_>>(), vec!["x3"]);
        assert!(split_subsets(&mad, "zzz").is_err());
        let two = MadSet::from_records(vec![rec("x1", "f", "g", 1), rec("x2", "g", "f", 1)]);
        assert!(split_subsets(&two, "f").unwrap().1.is_empty());
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(srcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(srcc(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        let v: f64 = srcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((v - 0.8).abs() < 1e-12);
        assert!(srcc(&[1.0, 2.0], &[1.0]).is_err());
        assert!(srcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0]), vec![1.5, 3.0, 1.5]);
    }
}
