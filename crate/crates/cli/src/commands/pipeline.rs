//! `stats`, `select` and `rank`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use mad_core::ranking::{competition_matrices, mle_rank, RankingError, ScoreTable};
use mad_core::segmap::load_label_map;
use mad_core::selection::{compute_scale_stats, run_pairwise_selection};
use mad_core::{LabelMap, MadSet, ScaleStats};

use crate::manifest::Manifest;
use crate::provenance::Provenance;
use crate::report::{read_madset, write_madset, write_reports, Rankings};
use crate::settings::Settings;

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "stats.csv")]
    pub out: PathBuf,
}

/// Per-category quartiles of object proportion over the labeled set.
pub fn cmd_stats(args: &StatsArgs, s: &Settings) -> Result<ScaleStats> {
    let manifest = Manifest::load(&args.manifest)?;
    let files = manifest.labeled_train_files()?;
    if files.is_empty() {
        bail!("the manifest lists no labeled training maps");
    }
    let maps: Vec<LabelMap> = files
        .iter()
        .map(|p| load_label_map(p, &manifest.catalog))
        .collect::<Result<_, _>>()?;
    let stats = compute_scale_stats(&maps, &manifest.catalog)?;
    let prov = Provenance::new("stats", s, &[("manifest", &args.manifest)])?;
    let mut out = BufWriter::new(File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?);
    for line in prov.comment_lines() {
        writeln!(out, "# {line}")?;
    }
    stats.write_csv(&manifest.catalog, &mut out)?;
    out.flush()?;
    Ok(stats)
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Scale statistics written by `stats`.
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long, default_value = "madset.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectSummary {
    pub records: usize,
    pub images: usize,
    /// `(defender, attacker)` to record count.
    pub per_pair: BTreeMap<(String, String), usize>,
    /// Category name to record count.
    pub per_category: BTreeMap<String, usize>,
}

impl SelectSummary {
    fn new(mad: &MadSet, manifest: &Manifest) -> Self {
        let mut per_pair = BTreeMap::new();
        let mut per_category = BTreeMap::new();
        for r in mad.records() {
            *per_pair.entry((r.defender.clone(), r.attacker.clone())).or_default() += 1;
            let name = manifest.catalog.name(r.category).unwrap_or("?").to_string();
            *per_category.entry(name).or_default() += 1;
        }
        SelectSummary {
            records: mad.records().len(),
            images: mad.images().len(),
            per_pair,
            per_category,
        }
    }
}

impl fmt::Display for SelectSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} records over {} distinct images", self.records, self.images)?;
        writeln!(f, "records per (defender, attacker):")?;
        for ((d, a), n) in &self.per_pair {
            writeln!(f, "  {d:>12} vs {a:<12} {n}")?;
        }
        writeln!(f, "records per category:")?;
        for (c, n) in &self.per_category {
            writeln!(f, "  {c:>12} {n}")?;
        }
        Ok(())
    }
}

pub fn read_stats(path: &Path, manifest: &Manifest) -> Result<ScaleStats> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ScaleStats::read_csv(&manifest.catalog, f).with_context(|| format!("reading {}", path.display()))
}

/// MAD selection over every ordered model pair.
pub fn cmd_select(args: &SelectArgs, s: &Settings) -> Result<SelectSummary> {
    let manifest = Manifest::load(&args.manifest)?;
    if manifest.models.len() < 2 {
        bail!(
            "selection needs at least two models, the manifest has {}",
            manifest.models.len()
        );
    }
    let stats = read_stats(&args.stats, &manifest)?;
    let corpus = manifest.corpus()?;
    let stores = manifest.stores();
    let cfg = s.selection();
    let mad = s.in_pool(|| run_pairwise_selection(&stores, &corpus, &manifest.catalog, &stats, &cfg))??;
    let prov = Provenance::new("select", s, &[("manifest", &args.manifest), ("stats", &args.stats)])?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_madset(&args.out, &mad, &prov)?;
    Ok(SelectSummary::new(&mad, &manifest))
}

#[derive(Debug, Clone, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "madset.jsonl")]
    pub madset: PathBuf,
    /// Dense ground truth; defaults to the manifest's annotations_dir.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Directory receiving A.csv, R.csv, ranking.json, outcomes.json, subsets.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Matrices, global rankings and reports from dense annotations.
pub fn cmd_rank(args: &RankArgs, s: &Settings) -> Result<Rankings> {
    let manifest = Manifest::load(&args.manifest)?;
    let mad = read_madset(&args.madset)?;
    if mad.is_empty() {
        bail!("{} has no records", args.madset.display());
    }
    let ids = manifest.model_ids();
    for m in mad.models() {
        if !ids.iter().any(|i| i == m) {
            bail!("MAD set model `{m}` is not in the manifest");
        }
    }
    let truth = manifest.annotations(args.annotations.as_deref())?;
    let stores = manifest.stores();
    let table = s
        .in_pool(|| ScoreTable::compute(&stores, mad.images(), &truth, s.metric, &manifest.catalog))?
        .map_err(annotation_hint)?;
    let cfg = s.ranking();
    let m = competition_matrices(&ids, &mad, &table, cfg.epsilon)?;
    let aggressiveness = mle_rank(&m.aggressiveness, &cfg)?;
    let resistance = mle_rank(&m.resistance, &cfg)?;

    let prov = Provenance::new("rank", s, &[("manifest", &args.manifest), ("madset", &args.madset)])?;
    let sidecar = crate::provenance::sidecar(&args.madset);
    let rankings = Rankings {
        aggressiveness,
        resistance,
    };
    write_reports(&args.out, &ids, &mad, &table, &m, &rankings, &prov)?;
    // keep the output directory usable as add-model state
    let copy = args.out.join("madset.jsonl");
    if !same_file(&copy, &args.madset) {
        fs::copy(&args.madset, &copy)?;
        if sidecar.is_file() {
            fs::copy(&sidecar, crate::provenance::sidecar(&copy))?;
        }
    }
    Ok(rankings)
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

pub(crate) fn annotation_hint(e: RankingError) -> anyhow::Error {
    match e {
        RankingError::MissingAnnotations(ids) => anyhow::anyhow!(
            "ground truth is missing for {} image(s); annotate these first:\n{}",
            ids.len(),
            ids.join("\n")
        ),
        other => other.into(),
    }
}
