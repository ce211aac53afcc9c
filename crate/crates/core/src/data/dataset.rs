//! Dataset directories.
//!
//! A dataset directory holds `train.tsv`, `valid.tsv`, `test.tsv`, optional
//! `entities.txt` / `relations.txt` vocabulary lists, and optional
//! `image_features.{tsv,mmkf}` / `text_features.{tsv,mmkf}` feature files.

use std::path::{Path, PathBuf};

use crate::data::features::{load_features, FeatureOptions, FeatureTable};
use crate::data::triples::{load_triples_with_vocab, read_name_list, TripleStore};
use crate::error::Result;
use crate::modality::Modality;

#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub entities: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub text: Option<PathBuf>,
}

pub fn feature_file_name(modality: Modality, binary: bool) -> String {
    format!("{}_features.{}", modality.name(), if binary { "mmkf" } else { "tsv" })
}

impl DataPaths {
    pub fn from_dir(dir: &Path) -> Self {
        let existing = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        let feature =
            |m: Modality| existing(&feature_file_name(m, false)).or_else(|| existing(&feature_file_name(m, true)));
        Self {
            train: dir.join("train.tsv"),
            valid: dir.join("valid.tsv"),
            test: dir.join("test.tsv"),
            entities: existing("entities.txt"),
            relations: existing("relations.txt"),
            image: feature(Modality::Image),
            text: feature(Modality::Text),
        }
    }

    pub fn feature_path(&self, modality: Modality) -> Option<&Path> {
        match modality {
            Modality::Image => self.image.as_deref(),
            Modality::Text => self.text.as_deref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub store: TripleStore,
    pub features: Vec<FeatureTable>,
}

impl Dataset {
    /// Loads triples and every feature file named in `paths`.
    pub fn load(paths: &DataPaths, opts: &FeatureOptions) -> Result<Self> {
        let entities = paths
            .entities
            .as_deref()
            .map(read_name_list)
            .transpose()?
            .unwrap_or_default();
        let relations = paths
            .relations
            .as_deref()
            .map(read_name_list)
            .transpose()?
            .unwrap_or_default();
        let store = load_triples_with_vocab(&paths.train, &paths.valid, &paths.test, &entities, &relations)?;
        let mut features = Vec::new();
        for m in Modality::FEATURE {
            if let Some(p) = paths.feature_path(m) {
                features.push(load_features(p, m, &store, opts)?);
            }
        }
        Ok(Self { store, features })
    }

    pub fn features(&self, modality: Modality) -> Option<&FeatureTable> {
        self.features.iter().find(|f| f.modality == modality)
    }

    pub fn features_mut(&mut self, modality: Modality) -> Option<&mut FeatureTable> {
        self.features.iter_mut().find(|f| f.modality == modality)
    }
}
