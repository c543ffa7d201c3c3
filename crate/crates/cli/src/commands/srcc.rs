//! `srcc`: Spearman correlation between two rankings of the same models.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use mad_core::ranking::srcc;
use mad_core::RankingVector;

#[derive(Debug, Clone, Args)]
pub struct SrccArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Key to read from report files holding several rankings.
    #[arg(long, default_value = "aggressiveness")]
    pub key: String,
}

/// Reads a ranking JSON, or the `key` entry of a `ranking.json` report.
pub fn read_ranking(path: &Path, key: &str) -> Result<RankingVector<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let v = if v.get("models").is_some() {
        v
    } else if let Some(inner) = v.get(key) {
        inner.clone()
    } else {
        bail!("{} holds neither a ranking nor a `{key}` entry", path.display());
    };
    RankingVector::from_json_value(v).with_context(|| format!("ranking in {}", path.display()))
}

/// Correlation of the two score vectors after aligning by model id.
pub fn srcc_of(a: &RankingVector<f64>, b: &RankingVector<f64>) -> Result<f64> {
    let mut ids: Vec<&String> = a.model_ids.iter().collect();
    ids.sort();
    let mut other: Vec<&String> = b.model_ids.iter().collect();
    other.sort();
    if ids != other {
        bail!(
            "the rankings cover different models: {:?} vs {:?}",
            a.model_ids,
            b.model_ids
        );
    }
    let xs: Vec<f64> = ids.iter().map(|id| a.score_of(id).expect("id present")).collect();
    let ys: Vec<f64> = ids.iter().map(|id| b.score_of(id).expect("id present")).collect();
    Ok(srcc(&xs, &ys)?)
}

pub fn cmd_srcc(args: &SrccArgs) -> Result<f64> {
    srcc_of(&read_ranking(&args.a, &args.key)?, &read_ranking(&args.b, &args.key)?)
}
