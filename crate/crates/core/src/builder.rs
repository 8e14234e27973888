//! Training-sequence construction for complex segmentation queries.
//!
//! A query names a random subset of the category table. The response answers
//! every queried class as `name<SEG>` (present) or `name<NEG>` (absent),
//! comma separated and terminated by `.`, in the same order as the query.
//! Each of those behaviours can be switched off for ablations, and a
//! single-target mode reproduces the one-existing-class-per-query baseline.

use std::collections::BTreeSet;
use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CategoryTable, ClassId, ImageRecord, Manifest};
use crate::rng::{stream_rng, StreamRng};

pub const IMAGE_TOKEN: &str = "<IMAGE>";
pub const SEG_TOKEN: &str = "<SEG>";
pub const NEG_TOKEN: &str = "<NEG>";
pub const ITEM_SEPARATOR: &str = ",";
pub const QUERY_NAME_SEPARATOR: &str = ", ";

/// Response used when augmentation is off and none of the sampled classes
/// is present.
pub const EMPTY_RESPONSE: &str = "none of the requested classes are present.";

/// Query templates as (prefix, suffix) around the comma-joined name list.
pub const TEMPLATES: [(&str, &str); 5] = [
    ("<IMAGE> Can you segment the ", " in this image?"),
    ("<IMAGE> Please segment the ", " in this image."),
    ("<IMAGE> What are the masks of the ", " in this picture?"),
    (
        "<IMAGE> Could you provide segmentation masks for the ",
        " in this image?",
    ),
    (
        "<IMAGE> Segment the following categories in this image: ",
        ".",
    ),
];

const BUILD_DOMAIN: &str = "segquery/build";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BuildError {
    #[error("min_sample must be at least 1")]
    MinSampleZero,
    #[error("min_sample {min} exceeds max_sample {max}")]
    MinExceedsMax { min: usize, max: usize },
    #[error("max_sample {max} exceeds the category table size {table}")]
    MaxExceedsTable { max: usize, table: usize },
    #[error("unknown template id {0} (valid: 0..{n})", n = TEMPLATES.len())]
    UnknownTemplate(usize),
    #[error("cannot build a query from an empty name list")]
    EmptyNameList,
    #[error("class {0} is not in the category table")]
    UnknownClass(ClassId),
    #[error("image {0:?} has no present classes")]
    NoPresentClasses(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// Random class list, optionally with negatives and order consistency.
    #[default]
    Complex,
    /// One existing class per query.
    SingleTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuilderConfig {
    pub min_sample: usize,
    pub max_sample: usize,
    pub augment_negatives: bool,
    pub order_consistent: bool,
    pub template_id: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: SampleMode,
}

impl BuilderConfig {
    /// Defaults: sample between 3 and 20 classes (clipped to the table),
    /// augmentation and order consistency on, template 0.
    pub fn for_table_size(table_size: usize, seed: u64) -> Self {
        let max_sample = table_size.min(20);
        Self {
            min_sample: max_sample.min(3),
            max_sample,
            augment_negatives: true,
            order_consistent: true,
            template_id: 0,
            seed,
            mode: SampleMode::Complex,
        }
    }

    pub fn validate(&self, table_size: usize) -> Result<(), BuildError> {
        if self.template_id >= TEMPLATES.len() {
            return Err(BuildError::UnknownTemplate(self.template_id));
        }
        if self.mode == SampleMode::SingleTarget {
            return Ok(());
        }
        if self.min_sample == 0 {
            return Err(BuildError::MinSampleZero);
        }
        if self.min_sample > self.max_sample {
            return Err(BuildError::MinExceedsMax {
                min: self.min_sample,
                max: self.max_sample,
            });
        }
        if self.max_sample > table_size {
            return Err(BuildError::MaxExceedsTable {
                max: self.max_sample,
                table: table_size,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub image_id: String,
    pub query: String,
    pub response: String,
    #[serde(rename = "seg_targets")]
    pub seg_target_ids: Vec<ClassId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltResponse {
    pub text: String,
    pub seg_target_ids: Vec<ClassId>,
}

/// Per-image random stream for dataset building.
pub fn image_rng(seed: u64, image_id: &str) -> StreamRng {
    stream_rng(seed, BUILD_DOMAIN, image_id.as_bytes())
}

/// Draw a list length uniformly in `[min_sample, max_sample]`, then that many
/// distinct ids from the whole table in shuffled order. Present classes are
/// not guaranteed to be covered.
pub fn sample_class_list<R: Rng + ?Sized>(
    table: &CategoryTable,
    cfg: &BuilderConfig,
    rng: &mut R,
) -> Vec<ClassId> {
    let k = rng.random_range(cfg.min_sample..=cfg.max_sample);
    let mut ids = table.ids();
    let (picked, _) = ids.partial_shuffle(rng, k);
    picked.to_vec()
}

pub fn build_query<S: AsRef<str>>(names: &[S], template_id: usize) -> Result<String, BuildError> {
    let (prefix, suffix) = TEMPLATES
        .get(template_id)
        .ok_or(BuildError::UnknownTemplate(template_id))?;
    if names.is_empty() {
        return Err(BuildError::EmptyNameList);
    }
    let list = names
        .iter()
        .map(|s| s.as_ref())
        .collect::<Vec<_>>()
        .join(QUERY_NAME_SEPARATOR);
    Ok(format!("{prefix}{list}{suffix}"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryMatch {
    pub template_id: usize,
    pub names: Vec<String>,
}

/// Recover the template and name list from a query built by [`build_query`].
pub fn parse_query(query: &str) -> Option<QueryMatch> {
    TEMPLATES
        .iter()
        .enumerate()
        .find_map(|(template_id, (prefix, suffix))| {
            let list = query.strip_prefix(prefix)?.strip_suffix(suffix)?;
            if list.is_empty() {
                return None;
            }
            Some(QueryMatch {
                template_id,
                names: list
                    .split(QUERY_NAME_SEPARATOR)
                    .map(str::to_string)
                    .collect(),
            })
        })
}

pub fn build_response(
    sampled: &[ClassId],
    present: &BTreeSet<ClassId>,
    table: &CategoryTable,
    cfg: &BuilderConfig,
) -> Result<BuiltResponse, BuildError> {
    if sampled.is_empty() {
        return Err(BuildError::EmptyNameList);
    }
    let mut order: Vec<(usize, ClassId)> = sampled
        .iter()
        .map(|&id| {
            table
                .position(id)
                .map(|pos| (pos, id))
                .ok_or(BuildError::UnknownClass(id))
        })
        .collect::<Result<_, _>>()?;
    if !cfg.order_consistent {
        order.sort_by_key(|&(pos, _)| pos);
    }

    let mut items = Vec::with_capacity(order.len());
    let mut seg_target_ids = Vec::new();
    for (_, id) in order {
        let name = table.name(id).expect("position implies membership");
        if present.contains(&id) {
            items.push(format!("{name}{SEG_TOKEN}"));
            seg_target_ids.push(id);
        } else if cfg.augment_negatives {
            items.push(format!("{name}{NEG_TOKEN}"));
        }
    }
    let text = if items.is_empty() {
        EMPTY_RESPONSE.to_string()
    } else {
        format!("{}.", items.join(ITEM_SEPARATOR))
    };
    Ok(BuiltResponse {
        text,
        seg_target_ids,
    })
}

pub fn build_sample<R: Rng + ?Sized>(
    record: &ImageRecord,
    table: &CategoryTable,
    cfg: &BuilderConfig,
    rng: &mut R,
) -> Result<TrainingSample, BuildError> {
    if cfg.mode == SampleMode::SingleTarget {
        return build_single_target_sample(record, table, cfg.template_id, rng);
    }
    let sampled = sample_class_list(table, cfg, rng);
    let names: Vec<&str> = sampled
        .iter()
        .map(|&id| table.name(id).ok_or(BuildError::UnknownClass(id)))
        .collect::<Result<_, _>>()?;
    let query = build_query(&names, cfg.template_id)?;
    let response = build_response(&sampled, &record.present_ids, table, cfg)?;
    Ok(TrainingSample {
        image_id: record.image_id.clone(),
        query,
        response: response.text,
        seg_target_ids: response.seg_target_ids,
    })
}

/// Baseline sample: one existing class chosen uniformly.
pub fn build_single_target_sample<R: Rng + ?Sized>(
    record: &ImageRecord,
    table: &CategoryTable,
    template_id: usize,
    rng: &mut R,
) -> Result<TrainingSample, BuildError> {
    if record.present_ids.is_empty() {
        return Err(BuildError::NoPresentClasses(record.image_id.clone()));
    }
    let idx = rng.random_range(0..record.present_ids.len());
    let id = *record.present_ids.iter().nth(idx).unwrap();
    let name = table.name(id).ok_or(BuildError::UnknownClass(id))?;
    Ok(TrainingSample {
        image_id: record.image_id.clone(),
        query: build_query(&[name], template_id)?,
        response: format!("{name}{SEG_TOKEN}."),
        seg_target_ids: vec![id],
    })
}

/// Build `samples_per_image` samples for every image, in manifest order.
///
/// In single-target mode, images without any present class are skipped.
pub fn build_dataset(
    manifest: &Manifest,
    cfg: &BuilderConfig,
    samples_per_image: usize,
) -> Result<Vec<TrainingSample>, BuildError> {
    cfg.validate(manifest.table.len())?;
    let per_image: Vec<Vec<TrainingSample>> = manifest
        .images
        .par_iter()
        .map(|record| {
            if cfg.mode == SampleMode::SingleTarget && record.present_ids.is_empty() {
                warn!(
                    "skipping image {:?}: no present classes for single-target sampling",
                    record.image_id
                );
                return Ok(Vec::new());
            }
            let mut rng = image_rng(cfg.seed, &record.image_id);
            (0..samples_per_image)
                .map(|_| build_sample(record, &manifest.table, cfg, &mut rng))
                .collect()
        })
        .collect::<Result<_, BuildError>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, rows: &[T]) -> std::io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
