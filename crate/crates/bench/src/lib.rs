//! Shared fixtures for the criterion benches under `benches/`.

use std::collections::HashMap;

use segquery_core::synthetic::{synthetic_dataset, SyntheticSpec};
use segquery_core::{CategoryTable, LabelMap};

/// A synthetic table with `classes` entries and `images` label maps of
/// `side`x`side` pixels.
pub fn fixture(
    classes: usize,
    images: usize,
    side: u32,
) -> (CategoryTable, Vec<(String, LabelMap)>) {
    let (file, maps) = synthetic_dataset(&SyntheticSpec {
        images,
        classes,
        width: side,
        height: side,
        ..Default::default()
    });
    let table = CategoryTable::new(file.categories).expect("synthetic table is valid");
    (table, maps)
}

pub fn labelmap_index(maps: &[(String, LabelMap)]) -> HashMap<String, LabelMap> {
    maps.iter().cloned().collect()
}
