//! `manifest.json`: where the corpus, predictions and labels live.
//!
//! ```json
//! {
//!   "corpus_root": "images",
//!   "catalog": { "classes": ["background", "person"], "ignore_id": 255 },
//!   "models": [{ "model_id": "m1", "prediction_dir": "models/m1" }],
//!   "labeled_train": ["train"],
//!   "annotations_dir": "annotations"
//! }
//! ```
//!
//! Relative paths are resolved against the manifest's directory. Entries of
//! `labeled_train` may be label-map files or directories of them.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mad_core::{AnnotationStore, ClassCatalog, Corpus, LabelMapStore, PredictionStore};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub model_id: String,
    pub prediction_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub corpus_root: PathBuf,
    pub catalog: ClassCatalog,
    pub models: Vec<ModelEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labeled_train: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations_dir: Option<PathBuf>,
}

impl Manifest {
    /// Reads, resolves and validates a manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let mut m: Manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.resolve(base);
        m.validate().with_context(|| format!("manifest {}", path.display()))?;
        Ok(m)
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.corpus_root);
        self.models.iter_mut().for_each(|m| join(&mut m.prediction_dir));
        self.labeled_train.iter_mut().for_each(join);
        if let Some(d) = self.annotations_dir.as_mut() {
            join(d);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for m in &self.models {
            if !seen.insert(&m.model_id) {
                bail!("model id `{}` appears twice", m.model_id);
            }
            if !m.prediction_dir.is_dir() {
                bail!(
                    "prediction directory {} of `{}` does not exist",
                    m.prediction_dir.display(),
                    m.model_id
                );
            }
        }
        if !self.corpus_root.is_dir() {
            bail!("corpus root {} does not exist", self.corpus_root.display());
        }
        for p in &self.labeled_train {
            if !p.exists() {
                bail!("labeled training path {} does not exist", p.display());
            }
        }
        if let Some(d) = &self.annotations_dir {
            if !d.is_dir() {
                bail!("annotations directory {} does not exist", d.display());
            }
        }
        Ok(())
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.model_id.clone()).collect()
    }

    pub fn stores(&self) -> Vec<PredictionStore> {
        self.models
            .iter()
            .map(|m| PredictionStore::from_dir(&m.model_id, &m.prediction_dir, self.catalog.clone()))
            .collect()
    }

    /// Image ids are the `.png` file stems under the corpus root.
    pub fn corpus(&self) -> Result<Corpus> {
        let ids = png_stems(&self.corpus_root)?;
        if ids.is_empty() {
            bail!("no .png images under {}", self.corpus_root.display());
        }
        Ok(Corpus::from_ids(ids)?)
    }

    pub fn labeled_train_files(&self) -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        for p in &self.labeled_train {
            if p.is_dir() {
                files.extend(png_stems(p)?.into_iter().map(|s| p.join(format!("{s}.png"))));
            } else {
                files.push(p.clone());
            }
        }
        Ok(files)
    }

    pub fn annotations(&self, override_dir: Option<&Path>) -> Result<AnnotationStore> {
        let dir = override_dir
            .map(Path::to_path_buf)
            .or_else(|| self.annotations_dir.clone())
            .context("no annotations directory in the manifest or on the command line")?;
        if !dir.is_dir() {
            bail!("annotations directory {} does not exist", dir.display());
        }
        Ok(LabelMapStore::from_dir("annotations", dir, self.catalog.clone()))
    }
}

/// Sorted stems of the `.png` files directly inside `dir`.
pub fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(stem.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}
