//! Two-alternative forced-choice trials and the append-only choice log.
//!
//! Each MAD record becomes one trial per repeat. Trial ids encode the record
//! index (`t00042`, or `t00042-r1` for the second repeat), so a log can be
//! mapped back to its competition cell from the MAD set alone.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::selection::{MadSet, SelectionRecord};

#[derive(Debug, thiserror::Error)]
pub enum ChoiceError {
    #[error("malformed trial id `{0}`")]
    BadTrialId(String),
    #[error("trial `{0}` does not reference a MAD record")]
    UnknownTrial(String),
    #[error("trial `{trial}`: chosen model `{model}` is neither defender nor attacker")]
    Inconsistent { trial: String, model: String },
    #[error("choice log line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    #[serde(alias = "LEFT")]
    Left,
    #[serde(alias = "RIGHT")]
    Right,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// One rater's decision on one trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    pub trial_id: String,
    pub chosen_side: Side,
    pub chosen_model: String,
    pub rater_id: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChoiceLog {
    records: Vec<ChoiceRecord>,
}

impl ChoiceLog {
    pub fn new(records: Vec<ChoiceRecord>) -> Self {
        ChoiceLog { records }
    }

    pub fn records(&self) -> &[ChoiceRecord] {
        &self.records
    }

    pub fn push(&mut self, r: ChoiceRecord) {
        self.records.push(r);
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), ChoiceError> {
        for r in &self.records {
            write_line(&mut out, r)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a log; a truncated final line (crash mid-write) is dropped.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, ChoiceError> {
        let lines: Vec<String> = input.lines().collect::<Result<_, _>>()?;
        let mut records = Vec::new();
        let last = lines.len().saturating_sub(1);
        for (n, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(r) => records.push(r),
                Err(e) if n == last && e.is_eof() => break,
                Err(source) => return Err(ChoiceError::Json { line: n + 1, source }),
            }
        }
        Ok(ChoiceLog { records })
    }
}

/// Serializes one record followed by a newline.
pub fn write_line<W: Write>(out: &mut W, r: &ChoiceRecord) -> Result<(), ChoiceError> {
    let mut line = serde_json::to_vec(r).map_err(|source| ChoiceError::Json { line: 0, source })?;
    line.push(b'\n');
    out.write_all(&line)?;
    Ok(())
}

pub fn trial_id(record_index: usize, repeat: usize) -> String {
    if repeat == 0 {
        format!("t{record_index:05}")
    } else {
        format!("t{record_index:05}-r{repeat}")
    }
}

/// `(record index, repeat)` encoded in a trial id.
pub fn parse_trial_id(id: &str) -> Result<(usize, usize), ChoiceError> {
    let bad = || ChoiceError::BadTrialId(id.to_string());
    let body = id.strip_prefix('t').ok_or_else(bad)?;
    let (idx, rep) = match body.split_once("-r") {
        Some((i, r)) => (i, r.parse::<usize>().map_err(|_| bad())?),
        None => (body, 0),
    };
    if idx.is_empty() || !idx.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    Ok((idx.parse().map_err(|_| bad())?, rep))
}

/// The MAD record a trial refers to.
pub fn trial_record<'a>(mad: &'a MadSet, trial_id: &str) -> Result<&'a SelectionRecord, ChoiceError> {
    let (idx, _) = parse_trial_id(trial_id)?;
    mad.records()
        .get(idx)
        .ok_or_else(|| ChoiceError::UnknownTrial(trial_id.to_string()))
}

/// Trial ids in presentation order: record-major, repeats innermost.
pub fn trial_ids(mad: &MadSet, repeats: usize) -> Vec<String> {
    (0..mad.records().len())
        .flat_map(|i| (0..repeats.max(1)).map(move |r| trial_id(i, r)))
        .collect()
}
