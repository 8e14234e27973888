//! Seeded synthetic datasets for tests, benchmarks and demos.
//!
//! Each class is present in an image independently with probability
//! `presence_prob`. Present classes own one seed pixel each and every other
//! pixel takes the class of its nearest seed, so the present set of a label
//! map is exactly the sampled set. An optional ignore rectangle never covers a
//! seed pixel.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;

use crate::data::{Category, ClassId, LabelMap, ManifestFile, ManifestImage};
use crate::rng::stream_rng;

const NAMES: [&str; 24] = [
    "sky",
    "road",
    "person",
    "car",
    "tree",
    "building",
    "grass",
    "water",
    "cat",
    "dog",
    "bicycle",
    "sidewalk",
    "mountain",
    "boat",
    "traffic light",
    "chair",
    "table",
    "wall",
    "floor",
    "ceiling",
    "bus",
    "train",
    "fence",
    "television",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub classes: usize,
    pub presence_prob: f64,
    pub ignore_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            images: 10,
            width: 32,
            height: 32,
            classes: 12,
            presence_prob: 0.4,
            ignore_prob: 0.3,
            seed: 0,
        }
    }
}

pub fn synthetic_categories(n: usize) -> Vec<Category> {
    (0..n)
        .map(|i| Category {
            id: ClassId(i as u16),
            name: NAMES
                .get(i)
                .map_or_else(|| format!("class {i}"), |s| s.to_string()),
            aliases: if NAMES.get(i) == Some(&"television") {
                vec!["tv monitor".into()]
            } else {
                vec![]
            },
        })
        .collect()
}

fn synthetic_labelmap(spec: &SyntheticSpec, image_index: usize) -> LabelMap {
    let mut rng = stream_rng(
        spec.seed,
        "segquery/synthetic",
        &(image_index as u64).to_le_bytes(),
    );
    let (w, h) = (spec.width as usize, spec.height as usize);
    let present: Vec<u16> = (0..spec.classes)
        .filter(|_| rng.random_bool(spec.presence_prob))
        .map(|c| c as u16)
        .collect();
    let mut pixels = vec![ClassId::IGNORE.0; w * h];
    if present.is_empty() {
        return LabelMap::new(spec.width, spec.height, pixels).unwrap();
    }
    let seeds: Vec<(usize, usize)> = sample(&mut rng, w * h, present.len())
        .into_iter()
        .map(|i| (i % w, i / w))
        .collect();
    for y in 0..h {
        for x in 0..w {
            let nearest = seeds
                .iter()
                .enumerate()
                .min_by_key(|(_, &(sx, sy))| {
                    let dx = sx as i64 - x as i64;
                    let dy = sy as i64 - y as i64;
                    dx * dx + dy * dy
                })
                .map(|(i, _)| i)
                .unwrap();
            pixels[y * w + x] = present[nearest];
        }
    }
    if rng.random_bool(spec.ignore_prob) {
        let rw = rng.random_range(1..=w.div_ceil(4));
        let rh = rng.random_range(1..=h.div_ceil(4));
        let x0 = rng.random_range(0..=w - rw);
        let y0 = rng.random_range(0..=h - rh);
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                if !seeds.contains(&(x, y)) {
                    pixels[y * w + x] = ClassId::IGNORE.0;
                }
            }
        }
    }
    LabelMap::new(spec.width, spec.height, pixels).unwrap()
}

/// Build the manifest document and label maps in memory.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> (ManifestFile, Vec<(String, LabelMap)>) {
    let mut images = Vec::with_capacity(spec.images);
    let mut maps = Vec::with_capacity(spec.images);
    for i in 0..spec.images {
        let id = format!("img_{i:04}");
        let map = synthetic_labelmap(spec, i);
        images.push(ManifestImage {
            id: id.clone(),
            labelmap: format!("{id}.lseg"),
            present: map.present_ids().into_iter().map(|c| c.0).collect(),
        });
        maps.push((id, map));
    }
    (
        ManifestFile {
            categories: synthetic_categories(spec.classes),
            images,
        },
        maps,
    )
}

/// Write `manifest.json` and one `.lseg` file per image into `dir`.
pub fn write_synthetic(dir: impl AsRef<Path>, spec: &SyntheticSpec) -> io::Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (manifest, maps) = synthetic_dataset(spec);
    for (img, (_, map)) in manifest.images.iter().zip(&maps) {
        fs::write(dir.join(&img.labelmap), map.encode())?;
    }
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}
