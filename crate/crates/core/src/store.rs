//! Keyed collections of label maps: model predictions and dense ground truth.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::segmap::{load_label_map, ClassCatalog, LabelMap, SegError};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no label map for image `{image}` in {owner}")]
    Missing { owner: String, image: String },
    #[error(transparent)]
    Seg(#[from] SegError),
}

#[derive(Debug, Clone)]
enum Backing {
    Memory(BTreeMap<String, LabelMap>),
    Dir { dir: PathBuf, catalog: ClassCatalog },
}

/// image_id → label map, either held in memory or read lazily from
/// `<dir>/<image_id>.png`.
#[derive(Debug, Clone)]
pub struct LabelMapStore {
    owner: String,
    backing: Backing,
}

impl LabelMapStore {
    pub fn in_memory(owner: impl Into<String>, maps: BTreeMap<String, LabelMap>) -> Self {
        LabelMapStore {
            owner: owner.into(),
            backing: Backing::Memory(maps),
        }
    }

    pub fn from_dir(owner: impl Into<String>, dir: impl Into<PathBuf>, catalog: ClassCatalog) -> Self {
        LabelMapStore {
            owner: owner.into(),
            backing: Backing::Dir {
                dir: dir.into(),
                catalog,
            },
        }
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn path_for(dir: &Path, image_id: &str) -> PathBuf {
        dir.join(format!("{image_id}.png"))
    }

    pub fn contains(&self, image_id: &str) -> bool {
        match &self.backing {
            Backing::Memory(m) => m.contains_key(image_id),
            Backing::Dir { dir, .. } => Self::path_for(dir, image_id).is_file(),
        }
    }

    pub fn get(&self, image_id: &str) -> Result<Cow<'_, LabelMap>, StoreError> {
        match &self.backing {
            Backing::Memory(m) => m.get(image_id).map(Cow::Borrowed).ok_or_else(|| self.missing(image_id)),
            Backing::Dir { dir, catalog } => {
                let path = Self::path_for(dir, image_id);
                if !path.is_file() {
                    return Err(self.missing(image_id));
                }
                Ok(Cow::Owned(load_label_map(&path, catalog)?))
            }
        }
    }

    fn missing(&self, image_id: &str) -> StoreError {
        StoreError::Missing {
            owner: self.owner.clone(),
            image: image_id.to_string(),
        }
    }
}

/// Precomputed predictions of one model over the corpus.
#[derive(Debug, Clone)]
pub struct PredictionStore {
    model_id: String,
    maps: LabelMapStore,
}

impl PredictionStore {
    pub fn new(model_id: impl Into<String>, maps: LabelMapStore) -> Self {
        PredictionStore {
            model_id: model_id.into(),
            maps,
        }
    }

    pub fn in_memory(model_id: impl Into<String>, maps: BTreeMap<String, LabelMap>) -> Self {
        let model_id = model_id.into();
        let maps = LabelMapStore::in_memory(format!("model `{model_id}`"), maps);
        PredictionStore { model_id, maps }
    }

    pub fn from_dir(model_id: impl Into<String>, dir: impl Into<PathBuf>, catalog: ClassCatalog) -> Self {
        let model_id = model_id.into();
        let maps = LabelMapStore::from_dir(format!("model `{model_id}`"), dir, catalog);
        PredictionStore { model_id, maps }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn prediction(&self, image_id: &str) -> Result<Cow<'_, LabelMap>, StoreError> {
        self.maps.get(image_id)
    }

    pub fn maps(&self) -> &LabelMapStore {
        &self.maps
    }
}

/// Dense human annotations keyed by image id.
pub type AnnotationStore = LabelMapStore;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmap::save_label_map;

    #[test]
    fn directory_store_reads_png_and_reports_missing() {
        let dir = tempfile::tempdir().unwrap();
        let cat = ClassCatalog::numbered(2).unwrap();
        let m = LabelMap::new(2, 1, vec![1, 2]).unwrap();
        save_label_map(&m, &LabelMapStore::path_for(dir.path(), "img1")).unwrap();
        let store = PredictionStore::from_dir("m", dir.path(), cat);
        assert_eq!(*store.prediction("img1").unwrap(), m);
        assert!(store.maps().contains("img1"));
        let err = store.prediction("img2").unwrap_err();
        assert!(err.to_string().contains("img2"));
        assert!(err.to_string().contains("`m`"));
    }
}
