//! Maximum-discrepancy (MAD) competition for semantic segmentation models.
//!
//! The crate covers the numeric core of the harness:
//!
//! - [`segmap`]: label maps, confusion matrices and the mIoU / FWIoU / MPA
//!   concordance measures.
//! - [`selection`]: per-pair, per-category selection of the images on which
//!   two models disagree most, under category and object-scale constraints.
//! - [`ranking`]: aggressiveness and resistance matrices from annotated
//!   selections, Thurstone maximum-likelihood aggregation, incremental model
//!   addition, outcome classification and Spearman correlation.
//! - [`synth`]: seeded synthetic corpora, simulated models and brute-force
//!   oracles for end-to-end checks.
//!
//! Metric and ranking code is generic over [`Scalar`] (`f32` or `f64`);
//! the `*64` aliases below fix the common double-precision choice.

pub mod choices;
pub mod ranking;
pub mod scalar;
pub mod segmap;
pub mod selection;
pub mod store;
pub mod synth;

pub use ranking::{Gauge, MatrixKind, OutcomeCase, PairMatrix, RankingConfig, RankingVector};
pub use scalar::Scalar;
pub use segmap::{ClassCatalog, ClassId, ConfusionMatrix, LabelMap, MetricKind};
pub use selection::{Corpus, ImageRef, MadSet, ScaleStats, SelectionConfig, SelectionRecord};
pub use store::{AnnotationStore, LabelMapStore, PredictionStore};

pub type PairMatrix64 = PairMatrix<f64>;
pub type PairMatrix32 = PairMatrix<f32>;
pub type RankingVector64 = RankingVector<f64>;
pub type RankingVector32 = RankingVector<f32>;
pub type RankingConfig64 = RankingConfig<f64>;
pub type RankingConfig32 = RankingConfig<f32>;
pub type ScoreTable64 = ranking::ScoreTable<f64>;
pub type CompetitionMatrices64 = ranking::CompetitionMatrices<f64>;
