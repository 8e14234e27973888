use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::category::{Category, CategoryTable, ClassId, TableError};
use super::labelmap::{LabelMap, LabelMapError};

/// Manifest document as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub categories: Vec<Category>,
    pub images: Vec<ManifestImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestImage {
    pub id: String,
    pub labelmap: String,
    pub present: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub image_id: String,
    pub labelmap_ref: PathBuf,
    pub present_ids: BTreeSet<ClassId>,
}

impl ImageRecord {
    pub fn load_labelmap(&self) -> Result<LabelMap, LabelMapError> {
        LabelMap::read(&self.labelmap_ref)
    }
}

fn fmt_ids(ids: &[ClassId]) -> String {
    ids.iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid category table: {0}")]
    Table(#[from] TableError),
    #[error("image id {0:?} appears more than once")]
    DuplicateImage(String),
    #[error("image {image_id:?}: label map {path}: {source}")]
    LabelMap {
        image_id: String,
        path: PathBuf,
        source: LabelMapError,
    },
    #[error("image {image_id:?}: class ids [{}] are not in the category table", fmt_ids(.ids))]
    UnknownClass { image_id: String, ids: Vec<ClassId> },
    #[error(
        "image {image_id:?}: declared present ids disagree with label map \
         (declared but absent: [{}]; present but undeclared: [{}])",
        fmt_ids(.declared_only), fmt_ids(.undeclared)
    )]
    PresentMismatch {
        image_id: String,
        declared_only: Vec<ClassId>,
        undeclared: Vec<ClassId>,
    },
}

/// A validated manifest: the category table plus per-image records.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub table: CategoryTable,
    pub images: Vec<ImageRecord>,
}

impl Manifest {
    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.image_id == image_id)
    }
}

/// Read and fully validate a manifest. Label-map paths resolve relative to
/// the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|source| ManifestError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    validate_manifest(file, root)
}

pub fn validate_manifest(file: ManifestFile, root: &Path) -> Result<Manifest, ManifestError> {
    let table = CategoryTable::new(file.categories)?;
    let mut seen = HashSet::new();
    let mut images = Vec::with_capacity(file.images.len());
    for img in file.images {
        if !seen.insert(img.id.clone()) {
            return Err(ManifestError::DuplicateImage(img.id));
        }
        let declared: BTreeSet<ClassId> = img.present.iter().map(|&v| ClassId(v)).collect();
        let labelmap_ref = root.join(&img.labelmap);
        let map = LabelMap::read(&labelmap_ref).map_err(|source| ManifestError::LabelMap {
            image_id: img.id.clone(),
            path: labelmap_ref.clone(),
            source,
        })?;
        let actual = map.present_ids();

        let unknown: Vec<ClassId> = declared
            .union(&actual)
            .filter(|c| !table.contains(**c))
            .copied()
            .collect();
        if !unknown.is_empty() {
            return Err(ManifestError::UnknownClass {
                image_id: img.id,
                ids: unknown,
            });
        }
        if declared != actual {
            return Err(ManifestError::PresentMismatch {
                image_id: img.id,
                declared_only: declared.difference(&actual).copied().collect(),
                undeclared: actual.difference(&declared).copied().collect(),
            });
        }
        images.push(ImageRecord {
            image_id: img.id,
            labelmap_ref,
            present_ids: actual,
        });
    }
    Ok(Manifest { table, images })
}
