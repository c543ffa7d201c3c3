//! Adding one model to a finished competition without touching existing entries.

use crate::ranking::{
    fill_pair, mle_rank, CompetitionMatrices, PairMatrix, RankingConfig, RankingError, RankingVector, ScoreTable,
};
use crate::scalar::Scalar;
use crate::segmap::{ClassCatalog, MetricKind};
use crate::selection::{select_pairs, Corpus, MadSet, ScaleStats, SelectionConfig};
use crate::store::{AnnotationStore, PredictionStore};

#[derive(Debug, Clone)]
pub struct ModelAddition<T> {
    /// Records selected for the `2J` ordered pairs involving the new model.
    pub new_records: MadSet,
    pub matrices: CompetitionMatrices<T>,
    pub aggressiveness: RankingVector<T>,
    pub resistance: RankingVector<T>,
}

/// Selection for the pairs `(f_i, f_new)` and `(f_new, f_i)`, in that order
/// for each incumbent `i`.
pub fn select_for_new_model(
    incumbents: &[PredictionStore],
    new_model: &PredictionStore,
    corpus: &Corpus,
    catalog: &ClassCatalog,
    stats: &ScaleStats,
    cfg: &SelectionConfig,
) -> Result<MadSet, RankingError> {
    let mut all = incumbents.to_vec();
    all.push(new_model.clone());
    let new = incumbents.len();
    let pairs: Vec<(usize, usize)> = (0..new).flat_map(|i| [(i, new), (new, i)]).collect();
    Ok(select_pairs(&all, &pairs, corpus, catalog, stats, cfg)?)
}

/// Grows `A` and `R` by one row and column for `new_model`, computing only
/// the entries that involve it.
pub fn expand_matrices<T: Scalar>(
    aggressiveness: &PairMatrix<T>,
    resistance: &PairMatrix<T>,
    new_model: &str,
    new_records: &MadSet,
    table: &ScoreTable<T>,
    eps: T,
) -> Result<CompetitionMatrices<T>, RankingError> {
    if aggressiveness.model_ids() != resistance.model_ids() {
        return Err(RankingError::Shape("A and R list different models".into()));
    }
    if aggressiveness.index_of(new_model).is_some() {
        return Err(RankingError::Config(format!("model `{new_model}` is already ranked")));
    }
    let extra = [new_model.to_string()];
    let mut out = CompetitionMatrices {
        aggressiveness: aggressiveness.expanded(&extra),
        resistance: resistance.expanded(&extra),
        warnings: Vec::new(),
    };
    let new = aggressiveness.len();
    for i in 0..new {
        fill_pair(&mut out, i, new, new_records, table, eps)?;
        fill_pair(&mut out, new, i, new_records, table, eps)?;
    }
    Ok(out)
}

/// Selects against the incumbents, scores the new images against `truth`,
/// expands both matrices and re-ranks.
///
/// `incumbents` must be in the row order of the existing matrices. When
/// annotations are missing the error lists every image that needs one.
#[allow(clippy::too_many_arguments)]
pub fn add_model<T: Scalar>(
    aggressiveness: &PairMatrix<T>,
    resistance: &PairMatrix<T>,
    incumbents: &[PredictionStore],
    new_model: &PredictionStore,
    corpus: &Corpus,
    catalog: &ClassCatalog,
    stats: &ScaleStats,
    selection: &SelectionConfig,
    truth: &AnnotationStore,
    ranking: &RankingConfig<T>,
) -> Result<ModelAddition<T>, RankingError> {
    let ids: Vec<&str> = incumbents.iter().map(PredictionStore::model_id).collect();
    if ids
        != aggressiveness
            .model_ids()
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>()
    {
        return Err(RankingError::Shape(format!(
            "incumbent models {ids:?} do not match matrix models {:?}",
            aggressiveness.model_ids()
        )));
    }
    ranking.validate()?;
    let new_records = select_for_new_model(incumbents, new_model, corpus, catalog, stats, selection)?;
    let mut all = incumbents.to_vec();
    all.push(new_model.clone());
    let metric: MetricKind = selection.metric;
    let table = ScoreTable::compute(&all, new_records.images(), truth, metric, catalog)?;
    let matrices = expand_matrices(
        aggressiveness,
        resistance,
        new_model.model_id(),
        &new_records,
        &table,
        ranking.epsilon,
    )?;
    for w in &matrices.warnings {
        log::warn!(
            "{} entry ({}, {}) has no selected images; set to 1",
            w.matrix,
            w.row,
            w.col
        );
    }
    let aggressiveness = mle_rank(&matrices.aggressiveness, ranking)?;
    let resistance = mle_rank(&matrices.resistance, ranking)?;
    Ok(ModelAddition {
        new_records,
        matrices,
        aggressiveness,
        resistance,
    })
}
