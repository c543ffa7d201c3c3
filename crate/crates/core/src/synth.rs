//! Seeded synthetic corpora, simulated models of known quality, and
//! brute-force oracles for the metric and selection paths.
//!
//! Random streams: every image draws from `ChaCha8Rng::seed_from_u64(seed)`
//! switched to stream `index` (corpus generation) or stream
//! `fnv1a64(image_id)` (corruption). The mapping is fixed so a seed always
//! reproduces the same bytes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::segmap::{ClassCatalog, LabelMap, MetricKind, SegError};
use crate::selection::{Corpus, MadSet, ScaleSource, ScaleStats, SelectionConfig, SelectionError, SelectionRecord};
use crate::store::PredictionStore;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Seg(#[from] SegError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_images: usize,
    /// Separate labeled images used for scale statistics.
    pub n_train: usize,
    pub width: u32,
    pub height: u32,
    /// Class count including background.
    pub num_classes: usize,
    /// Inclusive range of object blobs painted per image.
    pub blobs_per_image: (usize, usize),
    /// One simulated model per rate.
    pub noise_rates: Vec<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_images: 200,
            n_train: 100,
            width: 64,
            height: 64,
            num_classes: 6,
            blobs_per_image: (1, 3),
            noise_rates: vec![0.05, 0.15, 0.25, 0.35, 0.45],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::Config(m));
        if self.n_images == 0 {
            return err("n_images must be positive".into());
        }
        if self.width == 0 || self.height == 0 {
            return err(format!("image size {}x{} is empty", self.width, self.height));
        }
        if self.num_classes < 2 || self.num_classes > 255 {
            return err(format!("num_classes {} outside 2..=255", self.num_classes));
        }
        let (lo, hi) = self.blobs_per_image;
        if lo == 0 || lo > hi {
            return err(format!(
                "blob range {lo}..={hi} must be nonempty and start at 1 or more"
            ));
        }
        if self.n_images < self.num_classes - 1 {
            return err(format!(
                "{} images cannot contain all {} object classes",
                self.n_images,
                self.num_classes - 1
            ));
        }
        if let Some(r) = self.noise_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return err(format!("noise rate {r} outside [0, 1)"));
        }
        Ok(())
    }

    pub fn catalog(&self) -> ClassCatalog {
        ClassCatalog::numbered(self.num_classes - 1).expect("validated class count")
    }
}

pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of the `index`-th simulated model derived from the workspace seed.
pub fn model_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Seed of the labeled training split.
pub fn train_seed(seed: u64) -> u64 {
    seed ^ 0x5eed_7a1e_d5e7_0000
}

pub fn image_id(index: usize) -> String {
    format!("img{index:05}")
}

fn paint(map: &mut LabelMap, rng: &mut ChaCha8Rng, class: u8) {
    let (w, h) = (map.width(), map.height());
    let bw = ((w as f64 * rng.random_range(0.1..0.6)).round() as u32).max(1);
    let bh = ((h as f64 * rng.random_range(0.1..0.6)).round() as u32).max(1);
    let x0 = rng.random_range(0..=w - bw.min(w));
    let y0 = rng.random_range(0..=h - bh.min(h));
    let ellipse = rng.random_bool(0.5);
    let (cx, cy) = (x0 as f64 + bw as f64 / 2.0, y0 as f64 + bh as f64 / 2.0);
    let (rx, ry) = (bw as f64 / 2.0, bh as f64 / 2.0);
    let mut painted = false;
    for y in y0..(y0 + bh).min(h) {
        for x in x0..(x0 + bw).min(w) {
            let inside = !ellipse || {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            };
            if inside {
                map.pixels_mut()[(y * w + x) as usize] = class;
                painted = true;
            }
        }
    }
    if !painted {
        map.pixels_mut()[(y0 * w + x0) as usize] = class;
    }
}

/// Ground-truth maps: background plus randomly placed rectangles and
/// ellipses. Image `k`'s first blob has class `1 + k mod |Y|`, so every
/// object class occurs somewhere.
pub fn gen_corpus(cfg: &SynthConfig) -> Result<Vec<(String, LabelMap)>, SynthError> {
    cfg.validate()?;
    gen_maps(cfg, cfg.seed, cfg.n_images)
}

fn gen_maps(cfg: &SynthConfig, seed: u64, n: usize) -> Result<Vec<(String, LabelMap)>, SynthError> {
    let objects = cfg.num_classes - 1;
    (0..n)
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let mut map = LabelMap::filled(cfg.width, cfg.height, 0)?;
            let blobs = rng.random_range(cfg.blobs_per_image.0..=cfg.blobs_per_image.1);
            for b in 0..blobs {
                let class = if b == 0 {
                    1 + (k % objects) as u8
                } else {
                    rng.random_range(1..=objects as u8)
                };
                paint(&mut map, &mut rng, class);
            }
            // the forced class may have been painted over; restore one pixel
            let forced = 1 + (k % objects) as u8;
            if !map.pixels().contains(&forced) {
                map.pixels_mut()[0] = forced;
            }
            Ok((image_id(k), map))
        })
        .collect()
}

/// Flips each non-ignored pixel to a uniformly chosen different class with
/// probability `rate`.
pub fn corrupt(gt: &LabelMap, rate: f64, num_classes: usize, seed: u64, image_id: &str) -> LabelMap {
    assert!((0.0..1.0).contains(&rate), "corruption rate outside [0, 1)");
    let mut out = gt.clone();
    if rate == 0.0 || num_classes < 2 {
        return out;
    }
    let mut rng = stream_rng(seed, fnv1a64(image_id));
    let n = num_classes as u8;
    for p in out.pixels_mut() {
        if *p >= n {
            continue;
        }
        if rng.random_bool(rate) {
            let shift = rng.random_range(1..n);
            *p = (*p + shift) % n;
        }
    }
    out
}

/// A full synthetic competition held in memory.
#[derive(Debug, Clone)]
pub struct SynthCompetition {
    pub catalog: ClassCatalog,
    pub corpus: Corpus,
    pub truth: BTreeMap<String, LabelMap>,
    pub labeled_train: Vec<LabelMap>,
    /// `(model_id, noise rate, predictions)` in configuration order.
    pub models: Vec<(String, f64, BTreeMap<String, LabelMap>)>,
}

impl SynthCompetition {
    pub fn build(cfg: &SynthConfig) -> Result<Self, SynthError> {
        cfg.validate()?;
        let truth: BTreeMap<String, LabelMap> = gen_corpus(cfg)?.into_iter().collect();
        let labeled_train = gen_maps(cfg, train_seed(cfg.seed), cfg.n_train)?
            .into_iter()
            .map(|(_, m)| m)
            .collect();
        let models = cfg
            .noise_rates
            .iter()
            .enumerate()
            .map(|(k, &rate)| {
                let preds = simulate_model(&truth, rate, cfg.num_classes, model_seed(cfg.seed, k));
                (model_name(k), rate, preds)
            })
            .collect();
        Ok(SynthCompetition {
            catalog: cfg.catalog(),
            corpus: Corpus::from_ids(truth.keys().cloned())?,
            truth,
            labeled_train,
            models,
        })
    }

    pub fn stores(&self) -> Vec<PredictionStore> {
        self.models
            .iter()
            .map(|(id, _, preds)| PredictionStore::in_memory(id.clone(), preds.clone()))
            .collect()
    }
}

pub fn model_name(index: usize) -> String {
    format!("m{}", index + 1)
}

/// Predictions of a simulated model: `corrupt` applied to every image.
pub fn simulate_model(
    truth: &BTreeMap<String, LabelMap>,
    rate: f64,
    num_classes: usize,
    seed: u64,
) -> BTreeMap<String, LabelMap> {
    truth
        .iter()
        .map(|(id, gt)| (id.clone(), corrupt(gt, rate, num_classes, seed, id)))
        .collect()
}

/// Scripted forced-choice rater.
#[derive(Debug, Clone, PartialEq)]
pub enum ChoiceOracle {
    /// Prefers the prediction with the higher ground-truth score; the
    /// defender wins ties.
    TruthMetric,
    /// Always picks the named model when it competes, otherwise as `TruthMetric`.
    FixedWinner(String),
    /// `TruthMetric` with the decision flipped with probability `p`.
    Noisy(f64),
}

impl ChoiceOracle {
    pub fn choose<'a, R: Rng>(
        &self,
        record: &'a SelectionRecord,
        defender_score: f64,
        attacker_score: f64,
        rng: &mut R,
    ) -> &'a str {
        let truthful = if attacker_score > defender_score {
            record.attacker.as_str()
        } else {
            record.defender.as_str()
        };
        let other = |m: &str| {
            if m == record.defender {
                record.attacker.as_str()
            } else {
                record.defender.as_str()
            }
        };
        match self {
            ChoiceOracle::TruthMetric => truthful,
            ChoiceOracle::FixedWinner(w) if *w == record.defender => record.defender.as_str(),
            ChoiceOracle::FixedWinner(w) if *w == record.attacker => record.attacker.as_str(),
            ChoiceOracle::FixedWinner(_) => truthful,
            ChoiceOracle::Noisy(p) => {
                if rng.random_bool(p.clamp(0.0, 1.0)) {
                    other(truthful)
                } else {
                    truthful
                }
            }
        }
    }
}

/// Per-pixel metric evaluation without a confusion matrix.
pub fn brute_force_metric(
    a: &LabelMap,
    b: &LabelMap,
    metric: MetricKind,
    catalog: &ClassCatalog,
) -> Result<f64, SegError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(SegError::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    let ignore = catalog.ignore_id();
    let valid: Vec<(u8, u8)> = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .filter(|(&x, &y)| x != ignore && y != ignore)
        .map(|(&x, &y)| (x, y))
        .collect();
    if valid.is_empty() {
        return Err(SegError::NoValidPixels);
    }
    let total = valid.len() as f64;
    let mut sum = 0.0;
    let mut classes = 0u64;
    for y in 0..catalog.num_classes() as u8 {
        let inter = valid.iter().filter(|&&(p, q)| p == y && q == y).count();
        let union = valid.iter().filter(|&&(p, q)| p == y || q == y).count();
        let in_a = valid.iter().filter(|&&(p, _)| p == y).count();
        match metric {
            MetricKind::Miou if union > 0 => {
                sum += inter as f64 / union as f64;
                classes += 1;
            }
            MetricKind::Fwiou if union > 0 => {
                sum += in_a as f64 * (inter as f64 / union as f64);
            }
            MetricKind::Mpa if in_a > 0 => {
                sum += inter as f64 / in_a as f64;
                classes += 1;
            }
            _ => {}
        }
    }
    Ok(match metric {
        MetricKind::Fwiou => sum / total,
        _ => sum / classes as f64,
    })
}

fn naive_proportion(map: &LabelMap, y: u8, ignore: u8) -> f64 {
    let valid = map.pixels().iter().filter(|&&v| v != ignore).count();
    if valid == 0 {
        return 0.0;
    }
    map.pixels().iter().filter(|&&v| v == y).count() as f64 / valid as f64
}

/// Exhaustive re-implementation of pairwise selection: every (ordered pair,
/// category, image) is evaluated from scratch.
pub fn brute_force_select(
    stores: &[PredictionStore],
    corpus: &Corpus,
    catalog: &ClassCatalog,
    stats: &ScaleStats,
    cfg: &SelectionConfig,
) -> Result<MadSet, SelectionError> {
    let ignore = catalog.ignore_id();
    let mut records = Vec::new();
    for (d, defender) in stores.iter().enumerate() {
        for (a, attacker) in stores.iter().enumerate() {
            if d == a {
                continue;
            }
            for y in 1..catalog.num_classes() as u8 {
                let mut scored: Vec<(f64, String)> = Vec::new();
                for img in corpus.images() {
                    let pd = defender.prediction(&img.image_id)?;
                    let pa = attacker.prediction(&img.image_id)?;
                    if !pd.pixels().contains(&y) {
                        continue;
                    }
                    let admit = |m: &LabelMap| match stats.get(y) {
                        Some(b) => {
                            let p = naive_proportion(m, y, ignore);
                            b.t_min <= p && p <= b.t_max
                        }
                        None => true,
                    };
                    let ok = match cfg.scale_source {
                        ScaleSource::Defender => admit(&pd),
                        ScaleSource::Attacker => admit(&pa),
                        ScaleSource::Both => admit(&pd) && admit(&pa),
                    };
                    if !ok {
                        continue;
                    }
                    let s = brute_force_metric(&pd, &pa, cfg.metric, catalog)?;
                    scored.push((s, img.image_id.clone()));
                }
                scored.sort_by(|x, z| x.0.partial_cmp(&z.0).unwrap().then_with(|| x.1.cmp(&z.1)));
                for (rank, (s, id)) in scored.into_iter().take(cfg.k).enumerate() {
                    records.push(SelectionRecord {
                        image_id: id,
                        defender: defender.model_id().to_string(),
                        attacker: attacker.model_id().to_string(),
                        category: y,
                        concordance: s,
                        metric: cfg.metric,
                        rank_in_group: rank as u32 + 1,
                    });
                }
            }
        }
    }
    Ok(MadSet::from_records(records))
}
