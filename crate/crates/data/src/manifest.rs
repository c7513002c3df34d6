//! Description written next to every prepared dataset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::set::LabeledImageSet;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: String,
    pub count: usize,
    pub class_counts: Vec<usize>,
    /// File names relative to the dataset directory.
    pub images: String,
    pub labels: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub dataset: String,
    pub height: usize,
    pub width: usize,
    pub class_names: Vec<String>,
    pub seed: Option<u64>,
    /// Where the raw inputs came from.
    pub source: String,
    /// Preparation settings (patch size, preprocessing, split rule, ...).
    pub parameters: serde_json::Value,
    pub splits: Vec<SplitSummary>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn new(dataset: &str, source: &str, seed: Option<u64>, parameters: serde_json::Value) -> Self {
        Self {
            version: MANIFEST_VERSION,
            dataset: dataset.to_string(),
            height: 0,
            width: 0,
            class_names: Vec::new(),
            seed,
            source: source.to_string(),
            parameters,
            splits: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn add_split(&mut self, set: &LabeledImageSet, images: &str, labels: &str) {
        self.height = set.height;
        self.width = set.width;
        self.class_names = set.class_names.clone();
        self.splits.push(SplitSummary {
            split: format!("{:?}", set.split).to_lowercase(),
            count: set.len(),
            class_counts: set.class_counts(),
            images: images.to_string(),
            labels: labels.to_string(),
        });
        self.warnings.extend(set.warnings.iter().cloned());
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| DataError::Manifest(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| DataError::io(path, e))
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
        let m: Self =
            serde_json::from_str(&text).map_err(|e| DataError::Manifest(format!("{}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(DataError::Manifest(format!(
                "{}: unsupported version {} (expected {MANIFEST_VERSION})",
                path.display(),
                m.version
            )));
        }
        Ok(m)
    }
}
