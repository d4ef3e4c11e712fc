//! Dataset manifest: images, categories and per-instance annotations.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: i64,
    pub name: String,
    #[serde(default)]
    pub rare: bool,
}

/// One object instance; `area` is in original-image pixels².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub category_id: i64,
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub images: Vec<ImageInfo>,
    pub categories: Vec<Category>,
    pub annotations: Vec<Annotation>,
}

impl DatasetManifest {
    /// Checks id uniqueness, reference integrity and positive areas. All
    /// problems are reported together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut images = HashSet::new();
        for img in &self.images {
            if !images.insert(img.id.as_str()) {
                problems.push(format!("duplicate image id {:?}", img.id));
            }
        }
        let mut categories = HashSet::new();
        for cat in &self.categories {
            if !categories.insert(cat.id) {
                problems.push(format!("duplicate category id {}", cat.id));
            }
        }
        for (i, ann) in self.annotations.iter().enumerate() {
            if !images.contains(ann.image_id.as_str()) {
                problems.push(format!("annotation {i} references unknown image {:?}", ann.image_id));
            }
            if !categories.contains(&ann.category_id) {
                problems.push(format!("annotation {i} references unknown category {}", ann.category_id));
            }
            if !ann.area.is_finite() || ann.area <= 0.0 {
                problems.push(format!("annotation {i} has non-positive area {}", ann.area));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let manifest: Self = serde_json::from_str(text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::path(path, e))
    }

    pub fn category(&self, id: i64) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn rare_count(&self) -> usize {
        self.categories.iter().filter(|c| c.rare).count()
    }

    /// Annotation count per category, zero for unannotated categories.
    pub fn annotation_counts(&self) -> BTreeMap<i64, usize> {
        let mut counts: BTreeMap<i64, usize> = self.categories.iter().map(|c| (c.id, 0)).collect();
        for a in &self.annotations {
            *counts.entry(a.category_id).or_default() += 1;
        }
        counts
    }
}

/// Reads and validates a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
    DatasetManifest::from_json(&text)
}
