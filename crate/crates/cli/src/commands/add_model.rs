//! `add-model`: extends a finished competition by one model.
//!
//! The first call selects images for the new model's pairs and, when some of
//! them lack ground truth, writes `worklist.txt` and stops. Once they are
//! annotated the second call expands `A` and `R` and re-ranks.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use mad_core::ranking::{expand_matrices, mle_rank, select_for_new_model, ScoreTable};
use mad_core::{MadSet, MatrixKind, PredictionStore};

use super::pipeline::{annotation_hint, read_stats};
use crate::manifest::Manifest;
use crate::provenance::Provenance;
use crate::report::{read_madset, read_matrix, write_madset, write_reports, Rankings};
use crate::settings::{Overrides, Settings};

#[derive(Debug, Clone, Args)]
pub struct AddModelArgs {
    /// Manifest listing the ranked models plus the new one.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory of the earlier `rank` run (A.csv, R.csv, ranking.json, madset.jsonl).
    #[arg(long)]
    pub state: PathBuf,
    /// Id of the model to add.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Receives the work list or the updated state.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AddModelOutcome {
    /// Images that need ground truth before the model can be ranked.
    NeedsAnnotations {
        worklist: PathBuf,
        images: Vec<String>,
    },
    Ranked(Rankings),
}

struct PriorState {
    aggressiveness: mad_core::PairMatrix<f64>,
    resistance: mad_core::PairMatrix<f64>,
    mad: MadSet,
    provenance: Provenance,
}

fn load_state(dir: &Path) -> Result<PriorState> {
    let need = |name: &str| -> Result<PathBuf> {
        let p = dir.join(name);
        if !p.is_file() {
            bail!("prior state is missing {}", p.display());
        }
        Ok(p)
    };
    let a = read_matrix(&need("A.csv")?, MatrixKind::Aggressiveness)?;
    let r = read_matrix(&need("R.csv")?, MatrixKind::Resistance)?;
    if a.model_ids() != r.model_ids() {
        bail!("A.csv and R.csv in {} list different models", dir.display());
    }
    let mad_path = need("madset.jsonl")?;
    let mad = read_madset(&mad_path)?;
    let ranking: serde_json::Value = serde_json::from_str(&fs::read_to_string(need("ranking.json")?)?)?;
    let provenance: Provenance = serde_json::from_value(ranking["provenance"].clone())
        .with_context(|| format!("provenance in {}", dir.join("ranking.json").display()))?;
    Ok(PriorState {
        aggressiveness: a,
        resistance: r,
        mad,
        provenance,
    })
}

/// Settings for the continuation: the prior run's regime, which flags may
/// restate but not change.
pub fn continuation_settings(o: &Overrides, prior: &Provenance) -> Result<Settings> {
    let file = match &o.config {
        Some(p) => crate::settings::parse_config(&fs::read_to_string(p)?)?,
        None => Default::default(),
    };
    let s = Settings::layered(o, &file, prior.settings())?;
    if s.metric != prior.metric || s.k != prior.k || s.scale_source != prior.scale_source || s.eps != prior.eps {
        bail!(
            "the prior state was built with metric={} k={} scale-source={} eps={}; add-model must use the same regime",
            prior.metric,
            prior.k,
            prior.scale_source.as_str(),
            prior.eps
        );
    }
    Ok(s)
}

pub fn cmd_add_model(args: &AddModelArgs, o: &Overrides) -> Result<AddModelOutcome> {
    let manifest = Manifest::load(&args.manifest)?;
    let prior = load_state(&args.state).with_context(|| format!("state directory {}", args.state.display()))?;
    let s = continuation_settings(o, &prior.provenance)?;

    let incumbents_ids = prior.aggressiveness.model_ids().to_vec();
    if incumbents_ids.contains(&args.model) {
        bail!("model `{}` is already ranked in {}", args.model, args.state.display());
    }
    let expected: BTreeSet<&String> = incumbents_ids.iter().chain([&args.model]).collect();
    let listed: BTreeSet<String> = manifest.model_ids().into_iter().collect();
    if listed.iter().collect::<BTreeSet<_>>() != expected {
        bail!(
            "state directory ranks {:?}; the manifest must list exactly those models plus `{}`, but lists {:?}",
            incumbents_ids,
            args.model,
            listed
        );
    }
    let stores = manifest.stores();
    let by_id = |id: &str| -> PredictionStore { stores.iter().find(|p| p.model_id() == id).unwrap().clone() };
    let incumbents: Vec<PredictionStore> = incumbents_ids.iter().map(|id| by_id(id)).collect();
    let newcomer = by_id(&args.model);

    let stats = read_stats(&args.stats, &manifest)?;
    let corpus = manifest.corpus()?;
    let cfg = s.selection();
    let new_records =
        s.in_pool(|| select_for_new_model(&incumbents, &newcomer, &corpus, &manifest.catalog, &stats, &cfg))??;
    fs::create_dir_all(&args.out)?;
    let prov = Provenance::new(
        "add-model",
        &s,
        &[
            ("manifest", args.manifest.as_path()),
            ("stats", args.stats.as_path()),
            ("prior_A", &args.state.join("A.csv")),
            ("prior_R", &args.state.join("R.csv")),
            ("prior_madset", &args.state.join("madset.jsonl")),
        ],
    )?;
    write_madset(&args.out.join("madset.new.jsonl"), &new_records, &prov)?;

    let mut merged = prior.mad.clone();
    merged.extend(new_records.clone());
    let truth = manifest.annotations(args.annotations.as_deref()).ok();
    let missing: Vec<String> = merged
        .images()
        .iter()
        .filter(|id| truth.as_ref().is_none_or(|t| !t.contains(id)))
        .cloned()
        .collect();
    if !missing.is_empty() {
        let worklist = args.out.join("worklist.txt");
        let mut text = missing.join("\n");
        text.push('\n');
        fs::write(&worklist, text)?;
        return Ok(AddModelOutcome::NeedsAnnotations {
            worklist,
            images: missing,
        });
    }
    let truth = truth.expect("checked above");

    let mut all = incumbents.clone();
    all.push(newcomer);
    let table = s
        .in_pool(|| ScoreTable::compute(&all, merged.images(), &truth, s.metric, &manifest.catalog))?
        .map_err(annotation_hint)?;
    let m = expand_matrices(
        &prior.aggressiveness,
        &prior.resistance,
        &args.model,
        &new_records,
        &table,
        s.eps,
    )?;
    let rcfg = s.ranking();
    let aggressiveness = mle_rank(&m.aggressiveness, &rcfg)?;
    let resistance = mle_rank(&m.resistance, &rcfg)?;
    let ids: Vec<String> = m.aggressiveness.model_ids().to_vec();
    write_madset(&args.out.join("madset.jsonl"), &merged, &prov)?;
    let rankings = Rankings {
        aggressiveness,
        resistance,
    };
    write_reports(&args.out, &ids, &merged, &table, &m, &rankings, &prov)?;
    Ok(AddModelOutcome::Ranked(rankings))
}
