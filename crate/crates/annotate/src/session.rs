//! Trial bookkeeping, side assignment and the durable choice log.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use mad_core::choices::{self, trial_ids, ChoiceLog, ChoiceRecord, Side};
use mad_core::ranking::{pairwise_from_2afc, CoverageWarning};
use mad_core::segmap::encode_label_map;
use mad_core::synth::fnv1a64;
use mad_core::{ClassCatalog, ClassId, MadSet, PairMatrix, PredictionStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::AnnotateError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionConfig {
    /// Seed of the side randomization.
    pub seed: u64,
    /// Trials per MAD record and rater.
    pub repeats: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { seed: 0, repeats: 1 }
    }
}

/// `true` when the defender is shown on the left for this trial.
pub fn defender_on_left(seed: u64, trial_id: &str) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(trial_id));
    rng.random_bool(0.5)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub trial_id: String,
    pub record_index: usize,
    pub image_id: String,
    pub category: ClassId,
    pub defender: String,
    pub attacker: String,
    pub left_model: String,
    pub right_model: String,
}

impl Trial {
    pub fn model_on(&self, side: Side) -> &str {
        match side {
            Side::Left => &self.left_model,
            Side::Right => &self.right_model,
        }
    }

    pub fn defender_side(&self) -> Side {
        if self.left_model == self.defender {
            Side::Left
        } else {
            Side::Right
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

/// What a rater sees; model identities are deliberately absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrialView {
    pub trial_id: String,
    pub image_id: String,
    pub category: ClassId,
    pub category_name: String,
    pub image_url: String,
    pub left_url: String,
    pub right_url: String,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTrial {
    Trial(TrialView),
    Done { progress: Progress },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitStatus {
    Recorded,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ack {
    pub status: SubmitStatus,
    pub trial_id: String,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub trials: usize,
    pub records: usize,
    pub images: usize,
    pub repeats: usize,
    pub choices: usize,
    /// Completed trials per rater.
    pub raters: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixExport {
    pub kind: String,
    pub models: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MatrixExport {
    fn new(m: &PairMatrix<f64>) -> Self {
        let n = m.len();
        MatrixExport {
            kind: m.kind().to_string(),
            models: m.model_ids().to_vec(),
            rows: (0..n).map(|r| (0..n).map(|c| m.get(r, c)).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Export {
    /// The choice log as JSON Lines.
    pub log: String,
    pub aggressiveness: MatrixExport,
    pub resistance: MatrixExport,
    /// `[matrix, row model, column model]` of entries without trials.
    pub uncovered: Vec<[String; 3]>,
}

#[derive(Debug, Default)]
struct Choices {
    log: ChoiceLog,
    /// rater -> trial index -> side
    by_rater: HashMap<String, BTreeMap<usize, Side>>,
}

impl Choices {
    fn done(&self, rater: &str) -> usize {
        self.by_rater.get(rater).map_or(0, BTreeMap::len)
    }
}

/// One annotation session over a MAD set, backed by an append-only log file.
#[derive(Debug)]
pub struct Session {
    mad: MadSet,
    catalog: ClassCatalog,
    config: SessionConfig,
    trials: Vec<Trial>,
    index: HashMap<String, usize>,
    predictions: BTreeMap<String, PredictionStore>,
    images_dir: Option<PathBuf>,
    log_path: PathBuf,
    choices: RwLock<Choices>,
    writer: Mutex<File>,
}

impl Session {
    /// Opens a session, replaying any choices already in `log_path`.
    ///
    /// A torn final line (a crash mid-append) is cut off before new records
    /// are appended.
    pub fn open(
        mad: MadSet,
        catalog: ClassCatalog,
        predictions: Vec<PredictionStore>,
        images_dir: Option<PathBuf>,
        log_path: impl Into<PathBuf>,
        config: SessionConfig,
    ) -> Result<Self, AnnotateError> {
        if mad.is_empty() {
            return Err(AnnotateError::BadRequest("the MAD set has no records".into()));
        }
        let predictions: BTreeMap<String, PredictionStore> =
            predictions.into_iter().map(|p| (p.model_id().to_string(), p)).collect();
        for r in mad.records() {
            for m in [&r.defender, &r.attacker] {
                if !predictions.contains_key(m) {
                    return Err(AnnotateError::BadRequest(format!("no predictions for model `{m}`")));
                }
            }
        }
        let trials: Vec<Trial> = trial_ids(&mad, config.repeats)
            .into_iter()
            .map(|id| {
                let (idx, _) = choices::parse_trial_id(&id).expect("generated id parses");
                let r = &mad.records()[idx];
                let (left, right) = if defender_on_left(config.seed, &id) {
                    (r.defender.clone(), r.attacker.clone())
                } else {
                    (r.attacker.clone(), r.defender.clone())
                };
                Trial {
                    trial_id: id,
                    record_index: idx,
                    image_id: r.image_id.clone(),
                    category: r.category,
                    defender: r.defender.clone(),
                    attacker: r.attacker.clone(),
                    left_model: left,
                    right_model: right,
                }
            })
            .collect();
        let index = trials
            .iter()
            .enumerate()
            .map(|(i, t)| (t.trial_id.clone(), i))
            .collect();

        let log_path = log_path.into();
        let writer = open_log(&log_path)?;
        let session = Session {
            mad,
            catalog,
            config,
            trials,
            index,
            predictions,
            images_dir,
            log_path,
            choices: RwLock::new(Choices::default()),
            writer: Mutex::new(writer),
        };
        session.replay()?;
        Ok(session)
    }

    fn replay(&self) -> Result<(), AnnotateError> {
        let file = File::open(&self.log_path)?;
        let log = ChoiceLog::read_jsonl(BufReader::new(file))?;
        let mut state = self.choices.write().expect("choice lock");
        for rec in log.records() {
            let t = self.trial_index(&rec.trial_id)?;
            let trial = &self.trials[t];
            if trial.model_on(rec.chosen_side) != rec.chosen_model {
                return Err(AnnotateError::CorruptLog(format!(
                    "trial `{}` side {} is `{}`, log says `{}`",
                    rec.trial_id,
                    rec.chosen_side.as_str(),
                    trial.model_on(rec.chosen_side),
                    rec.chosen_model
                )));
            }
            let seen = state.by_rater.entry(rec.rater_id.clone()).or_default();
            match seen.get(&t) {
                Some(&s) if s == rec.chosen_side => continue,
                Some(_) => {
                    return Err(AnnotateError::CorruptLog(format!(
                        "rater `{}` has conflicting choices for `{}`",
                        rec.rater_id, rec.trial_id
                    )))
                }
                None => {
                    seen.insert(t, rec.chosen_side);
                    state.log.push(rec.clone());
                }
            }
        }
        log::info!("replayed {} choices from {}", state.log.len(), self.log_path.display());
        Ok(())
    }

    pub fn config(&self) -> SessionConfig {
        self.config
    }

    pub fn mad(&self) -> &MadSet {
        &self.mad
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    pub fn trial(&self, trial_id: &str) -> Result<&Trial, AnnotateError> {
        self.trial_index(trial_id).map(|i| &self.trials[i])
    }

    fn trial_index(&self, trial_id: &str) -> Result<usize, AnnotateError> {
        self.index
            .get(trial_id)
            .copied()
            .ok_or_else(|| AnnotateError::UnknownTrial(trial_id.to_string()))
    }

    fn progress(&self, state: &Choices, rater: &str) -> Progress {
        Progress {
            done: state.done(rater),
            total: self.trials.len(),
        }
    }

    /// Lowest-ordered trial this rater has not answered yet.
    pub fn next_trial(&self, rater: &str) -> Result<NextTrial, AnnotateError> {
        check_rater(rater)?;
        let state = self.choices.read().expect("choice lock");
        let answered = state.by_rater.get(rater);
        let progress = self.progress(&state, rater);
        let next = (0..self.trials.len()).find(|i| answered.is_none_or(|a| !a.contains_key(i)));
        Ok(match next {
            None => NextTrial::Done { progress },
            Some(i) => {
                let t = &self.trials[i];
                NextTrial::Trial(TrialView {
                    trial_id: t.trial_id.clone(),
                    image_id: t.image_id.clone(),
                    category: t.category,
                    category_name: self.catalog.name(t.category).unwrap_or_default().to_string(),
                    image_url: format!("/assets/image/{}", t.image_id),
                    left_url: format!("/assets/pred/left/{}", t.trial_id),
                    right_url: format!("/assets/pred/right/{}", t.trial_id),
                    progress,
                })
            }
        })
    }

    /// Records a choice; the log line is on disk before this returns.
    pub fn submit(&self, trial_id: &str, side: Side, rater: &str) -> Result<Ack, AnnotateError> {
        check_rater(rater)?;
        let t = self.trial_index(trial_id)?;
        // the writer lock serializes appends; the state lock is only taken for
        // the short check and update around the fsync
        let mut writer = self.writer.lock().expect("writer lock");
        {
            let state = self.choices.read().expect("choice lock");
            if let Some(&prev) = state.by_rater.get(rater).and_then(|a| a.get(&t)) {
                if prev == side {
                    return Ok(Ack {
                        status: SubmitStatus::Duplicate,
                        trial_id: trial_id.to_string(),
                        progress: self.progress(&state, rater),
                    });
                }
                return Err(AnnotateError::Conflict {
                    trial_id: trial_id.to_string(),
                    chosen_side: prev,
                });
            }
        }
        let rec = ChoiceRecord {
            trial_id: trial_id.to_string(),
            chosen_side: side,
            chosen_model: self.trials[t].model_on(side).to_string(),
            rater_id: rater.to_string(),
            timestamp: now_ms(),
        };
        choices::write_line(&mut *writer, &rec)?;
        writer.sync_data()?;
        let mut state = self.choices.write().expect("choice lock");
        state.by_rater.entry(rater.to_string()).or_default().insert(t, side);
        state.log.push(rec);
        Ok(Ack {
            status: SubmitStatus::Recorded,
            trial_id: trial_id.to_string(),
            progress: self.progress(&state, rater),
        })
    }

    pub fn summary(&self) -> SessionSummary {
        let state = self.choices.read().expect("choice lock");
        SessionSummary {
            trials: self.trials.len(),
            records: self.mad.records().len(),
            images: self.mad.images().len(),
            repeats: self.config.repeats.max(1),
            choices: state.log.len(),
            raters: state.by_rater.iter().map(|(r, a)| (r.clone(), a.len())).collect(),
        }
    }

    /// Snapshot of the accepted choices in arrival order.
    pub fn log(&self) -> ChoiceLog {
        self.choices.read().expect("choice lock").log.clone()
    }

    /// The log plus win-ratio matrices; a pure function of the log.
    pub fn export(&self) -> Result<Export, AnnotateError> {
        export_log(&self.log(), &self.mad, self.predictions.keys().cloned().collect())
    }

    pub fn image_png(&self, image_id: &str) -> Result<Vec<u8>, AnnotateError> {
        let missing = || AnnotateError::NotFound(format!("image `{image_id}`"));
        if !self.mad.images().contains(image_id) {
            return Err(missing());
        }
        let dir = self.images_dir.as_ref().ok_or_else(missing)?;
        std::fs::read(dir.join(format!("{image_id}.png"))).map_err(|_| missing())
    }

    pub fn prediction_png(&self, side: Side, trial_id: &str) -> Result<Vec<u8>, AnnotateError> {
        let t = self.trial(trial_id)?;
        let store = &self.predictions[t.model_on(side)];
        let map = store
            .prediction(&t.image_id)
            .map_err(|e| AnnotateError::Asset(e.to_string()))?;
        let mut out = Vec::new();
        encode_label_map(&map, &mut out).map_err(|e| AnnotateError::Asset(e.to_string()))?;
        Ok(out)
    }
}

/// Export of an arbitrary log against its MAD set.
pub fn export_log(log: &ChoiceLog, mad: &MadSet, model_ids: Vec<String>) -> Result<Export, AnnotateError> {
    if log.is_empty() {
        return Err(AnnotateError::EmptyLog);
    }
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf)?;
    let m = pairwise_from_2afc::<f64>(log, mad, &model_ids).map_err(|e| AnnotateError::CorruptLog(e.to_string()))?;
    let uncovered = m
        .warnings
        .iter()
        .map(|CoverageWarning { matrix, row, col }| [matrix.to_string(), row.clone(), col.clone()])
        .collect();
    Ok(Export {
        log: String::from_utf8(buf).expect("json is utf-8"),
        aggressiveness: MatrixExport::new(&m.aggressiveness),
        resistance: MatrixExport::new(&m.resistance),
        uncovered,
    })
}

fn check_rater(rater: &str) -> Result<(), AnnotateError> {
    if rater.trim().is_empty() {
        return Err(AnnotateError::BadRequest("rater id must not be empty".into()));
    }
    Ok(())
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Opens the log for appending, first truncating an unterminated last line.
fn open_log(path: &Path) -> Result<File, AnnotateError> {
    let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if let Some(&last) = bytes.last() {
        if last != b'\n' {
            let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
            log::warn!(
                "dropping {} bytes of a torn record at the end of {}",
                bytes.len() - keep,
                path.display()
            );
            file.set_len(keep as u64)?;
            file.sync_data()?;
        }
    }
    file.seek(SeekFrom::End(0))?;
    Ok(file)
}
