use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::segmap::{ClassId, MetricKind};
use crate::selection::SelectionError;

/// One selected image together with the competition cell that picked it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub image_id: String,
    pub defender: String,
    pub attacker: String,
    pub category: ClassId,
    pub concordance: f64,
    pub metric: MetricKind,
    pub rank_in_group: u32,
}

/// Selected records plus the deduplicated image set they reference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MadSet {
    records: Vec<SelectionRecord>,
    images: BTreeSet<String>,
}

impl MadSet {
    pub fn from_records(records: Vec<SelectionRecord>) -> Self {
        let images = records.iter().map(|r| r.image_id.clone()).collect();
        MadSet { records, images }
    }

    pub fn records(&self) -> &[SelectionRecord] {
        &self.records
    }

    pub fn images(&self) -> &BTreeSet<String> {
        &self.images
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends records of another set, keeping the existing order first.
    pub fn extend(&mut self, other: MadSet) {
        self.images.extend(other.images);
        self.records.extend(other.records);
    }

    /// Records of the cell with the given defender and attacker.
    pub fn subset<'a>(
        &'a self,
        defender: &'a str,
        attacker: &'a str,
    ) -> impl Iterator<Item = &'a SelectionRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.defender == defender && r.attacker == attacker)
    }

    /// Model ids appearing as defender or attacker, sorted.
    pub fn models(&self) -> BTreeSet<&str> {
        self.records
            .iter()
            .flat_map(|r| [r.defender.as_str(), r.attacker.as_str()])
            .collect()
    }

    /// JSON Lines, one record per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), SelectionError> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(|source| SelectionError::Json { line: 0, source })?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, SelectionError> {
        let mut records = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: SelectionRecord =
                serde_json::from_str(&line).map_err(|source| SelectionError::Json { line: n + 1, source })?;
            if r.defender == r.attacker {
                return Err(SelectionError::Config(format!(
                    "line {}: defender and attacker are both `{}`",
                    n + 1,
                    r.defender
                )));
            }
            records.push(r);
        }
        Ok(MadSet::from_records(records))
    }
}

/// Deduplicated images of a MAD set in ascending id order, for annotation.
pub fn assemble_annotation_batch(mad: &MadSet) -> Result<Vec<String>, SelectionError> {
    if mad.is_empty() {
        return Err(SelectionError::EmptyMadSet);
    }
    Ok(mad.images().iter().cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(image: &str, d: &str, a: &str) -> SelectionRecord {
        SelectionRecord {
            image_id: image.into(),
            defender: d.into(),
            attacker: a.into(),
            category: 1,
            concordance: 0.25,
            metric: MetricKind::Miou,
            rank_in_group: 1,
        }
    }

    #[test]
    fn batch_is_sorted_and_deduplicated() {
        let mad = MadSet::from_records(vec![rec("b", "x", "y"), rec("a", "x", "y"), rec("a", "y", "x")]);
        assert_eq!(assemble_annotation_batch(&mad).unwrap(), vec!["a", "b"]);
        assert!(matches!(
            assemble_annotation_batch(&MadSet::default()),
            Err(SelectionError::EmptyMadSet)
        ));
    }

    #[test]
    fn jsonl_layout_and_round_trip() {
        let mad = MadSet::from_records(vec![rec("img1", "m1", "m2"), rec("img2", "m2", "m1")]);
        let mut buf = Vec::new();
        mad.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"image_id":"img1","defender":"m1","attacker":"m2","category":1,"concordance":0.25,"metric":"miou","rank_in_group":1}"#
        );
        assert_eq!(MadSet::read_jsonl(buf.as_slice()).unwrap(), mad);
        assert_eq!(mad.subset("m2", "m1").count(), 1);
        assert_eq!(mad.models().into_iter().collect::<Vec<_>>(), vec!["m1", "m2"]);
    }

    #[test]
    fn rejects_self_pairs_and_reports_line() {
        let bad = r#"{"image_id":"i","defender":"m","attacker":"m","category":1,"concordance":0.1,"metric":"miou","rank_in_group":1}"#;
        assert!(MadSet::read_jsonl(bad.as_bytes()).is_err());
        let err = MadSet::read_jsonl("\n{oops".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
