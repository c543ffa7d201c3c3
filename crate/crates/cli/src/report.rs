//! Output files shared by `rank` and `add-model`.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use mad_core::ranking::{
    split_subsets, tally_outcomes, CompetitionMatrices, CoverageWarning, OutcomeTally, ScoreTable,
};
use mad_core::selection::quantile_linear;
use mad_core::{MadSet, PairMatrix, RankingVector};
use serde::Serialize;
use serde_json::json;

use crate::provenance::{sidecar, Provenance};

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_matrix(path: &Path, m: &PairMatrix<f64>, prov: &Provenance) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    m.write_csv(&prov.comment_lines(), &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path, kind: mad_core::MatrixKind) -> Result<PairMatrix<f64>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    PairMatrix::read_csv(kind, f).with_context(|| format!("reading {}", path.display()))
}

pub fn write_madset(path: &Path, mad: &MadSet, prov: &Provenance) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    mad.write_jsonl(&mut out)?;
    out.flush()?;
    write_json(&sidecar(path), &serde_json::to_value(prov)?)
}

pub fn read_madset(path: &Path) -> Result<MadSet> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    MadSet::read_jsonl(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

/// Distribution of one model's ground-truth scores over a set of images.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSummary {
    pub n: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
}

impl ScoreSummary {
    pub fn of(mut v: Vec<f64>) -> Self {
        v.sort_by(f64::total_cmp);
        let q = |p: f64| (!v.is_empty()).then(|| quantile_linear(&v, p));
        ScoreSummary {
            n: v.len(),
            mean: (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64),
            min: v.first().copied(),
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v.last().copied(),
        }
    }
}

fn tally_json(t: &OutcomeTally) -> serde_json::Value {
    json!({ "both_good": t.both_good, "one_fails": t.one_fails, "both_fail": t.both_fail, "total": t.total() })
}

fn warnings_json(w: &[CoverageWarning]) -> serde_json::Value {
    w.iter()
        .map(|w| json!({ "matrix": w.matrix.to_string(), "row": w.row, "col": w.col }))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rankings {
    pub aggressiveness: RankingVector<f64>,
    pub resistance: RankingVector<f64>,
}

/// A.csv, R.csv, ranking.json, outcomes.json and subsets.json in `dir`.
pub fn write_reports(
    dir: &Path,
    model_ids: &[String],
    mad: &MadSet,
    table: &ScoreTable<f64>,
    m: &CompetitionMatrices<f64>,
    rankings: &Rankings,
    prov: &Provenance,
) -> Result<()> {
    let Rankings {
        aggressiveness,
        resistance,
    } = rankings;
    let listed: BTreeSet<&str> = model_ids.iter().map(String::as_str).collect();
    for side in [aggressiveness.model_ids.iter(), resistance.model_ids.iter()] {
        if side.map(String::as_str).collect::<BTreeSet<_>>() != listed {
            bail!("ranking models differ from the manifest models");
        }
    }
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join("A.csv"), &m.aggressiveness, prov)?;
    write_matrix(&dir.join("R.csv"), &m.resistance, prov)?;
    let prov_json = serde_json::to_value(prov)?;
    write_json(
        &dir.join("ranking.json"),
        &json!({
            "aggressiveness": aggressiveness.to_json_value(),
            "resistance": resistance.to_json_value(),
            "uncovered": warnings_json(&m.warnings),
            "provenance": prov_json,
        }),
    )?;

    let (total, per_pair) = tally_outcomes(mad, table, prov.threshold)?;
    if total.total() != mad.records().len() {
        bail!(
            "outcome tally covers {} of {} records",
            total.total(),
            mad.records().len()
        );
    }
    let pairs: Vec<_> = per_pair
        .iter()
        .map(|((d, a), t)| {
            let mut v = tally_json(t);
            v["defender"] = json!(d);
            v["attacker"] = json!(a);
            v
        })
        .collect();
    write_json(
        &dir.join("outcomes.json"),
        &json!({ "threshold": prov.threshold, "total": tally_json(&total), "pairs": pairs, "provenance": prov_json }),
    )?;

    let mut models = Vec::new();
    for id in model_ids {
        let (assoc, rest) = match split_subsets(mad, id) {
            Ok(s) => s,
            Err(_) => (BTreeSet::new(), mad.images().clone()),
        };
        let scores =
            |set: &BTreeSet<String>| -> Result<Vec<f64>> { set.iter().map(|img| Ok(table.get(id, img)?)).collect() };
        models.push(json!({
            "id": id,
            "associated": ScoreSummary::of(scores(&assoc)?),
            "rest": ScoreSummary::of(scores(&rest)?),
        }));
    }
    write_json(
        &dir.join("subsets.json"),
        &json!({ "models": models, "provenance": prov_json }),
    )
}
