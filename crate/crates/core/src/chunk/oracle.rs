//! Ground-truth endpoint for end-to-end testing.
//!
//! The oracle answers every query in the canonical response format with exact
//! per-class masks from the label maps. Two optional degradations simulate
//! known model failures:
//!
//! * dropping: each present class is omitted from the answer when
//!   `unit_draw(seed, "segquery/oracle-drop", image_id || 0x00 || class_id LE)`
//!   falls below the drop probability. The decision depends only on
//!   (seed, image, class), so it is identical for every chunking.
//! * shuffling: answer items are permuted by a stream keyed on the image and
//!   the query text.

use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::endpoint::{EndpointError, ModelEndpoint, SegmentQueryResponse, WireMask};
use crate::builder::{parse_query, EMPTY_RESPONSE, NEG_TOKEN, SEG_TOKEN};
use crate::data::{CategoryTable, ClassId, LabelMap, Manifest, ManifestError};
use crate::rng::{stream_rng, unit_draw};

pub const DROP_DOMAIN: &str = "segquery/oracle-drop";
const SHUFFLE_DOMAIN: &str = "segquery/oracle-shuffle";

/// Key bytes for a per-(image, class) draw.
pub fn image_class_key(image_id: &str, class: ClassId) -> Vec<u8> {
    let mut key = Vec::with_capacity(image_id.len() + 3);
    key.extend_from_slice(image_id.as_bytes());
    key.push(0);
    key.extend_from_slice(&class.0.to_le_bytes());
    key
}

/// Whether the degraded oracle omits `class` from its answers for `image_id`.
pub fn is_dropped(seed: u64, drop_prob: f64, image_id: &str, class: ClassId) -> bool {
    drop_prob > 0.0 && unit_draw(seed, DROP_DOMAIN, &image_class_key(image_id, class)) < drop_prob
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degradation {
    pub drop_prob: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct OracleEndpoint {
    table: CategoryTable,
    labelmaps: HashMap<String, LabelMap>,
    degradation: Option<Degradation>,
    shuffle_seed: Option<u64>,
}

impl OracleEndpoint {
    pub fn new(table: CategoryTable, labelmaps: HashMap<String, LabelMap>) -> Self {
        Self {
            table,
            labelmaps,
            degradation: None,
            shuffle_seed: None,
        }
    }

    /// Load every label map named in the manifest.
    pub fn from_manifest(manifest: &Manifest) -> Result<Self, ManifestError> {
        let mut maps = HashMap::with_capacity(manifest.images.len());
        for rec in &manifest.images {
            let map = rec
                .load_labelmap()
                .map_err(|source| ManifestError::LabelMap {
                    image_id: rec.image_id.clone(),
                    path: rec.labelmap_ref.clone(),
                    source,
                })?;
            maps.insert(rec.image_id.clone(), map);
        }
        Ok(Self::new(manifest.table.clone(), maps))
    }

    pub fn with_drops(mut self, drop_prob: f64, seed: u64) -> Self {
        self.degradation = Some(Degradation { drop_prob, seed });
        self
    }

    pub fn with_shuffle(mut self, seed: u64) -> Self {
        self.shuffle_seed = Some(seed);
        self
    }
}

impl ModelEndpoint for OracleEndpoint {
    fn submit(&self, image_id: &str, query: &str) -> Result<SegmentQueryResponse, EndpointError> {
        let map = self
            .labelmaps
            .get(image_id)
            .ok_or_else(|| EndpointError::Rejected(format!("unknown image {image_id:?}")))?;
        let parsed = parse_query(query)
            .ok_or_else(|| EndpointError::Rejected(format!("unrecognized query {query:?}")))?;
        let present = map.present_ids();

        let mut items: Vec<(String, Option<ClassId>)> = Vec::new();
        for name in &parsed.names {
            match self.table.resolve(name) {
                Some((id, _)) if present.contains(&id) => {
                    let dropped = self
                        .degradation
                        .is_some_and(|d| is_dropped(d.seed, d.drop_prob, image_id, id));
                    if !dropped {
                        items.push((name.clone(), Some(id)));
                    }
                }
                _ => items.push((name.clone(), None)),
            }
        }
        if let Some(seed) = self.shuffle_seed {
            let mut key = image_id.as_bytes().to_vec();
            key.push(0);
            key.extend_from_slice(query.as_bytes());
            items.shuffle(&mut stream_rng(seed, SHUFFLE_DOMAIN, &key));
        }

        if items.is_empty() {
            return Ok(SegmentQueryResponse {
                text: EMPTY_RESPONSE.to_string(),
                masks: Vec::new(),
            });
        }
        let mut masks = Vec::new();
        let body = items
            .iter()
            .map(|(name, seg)| match seg {
                Some(id) => {
                    masks.push(WireMask::from_mask(&map.binarize(*id)));
                    format!("{name}{SEG_TOKEN}")
                }
                None => format!("{name}{NEG_TOKEN}"),
            })
            .collect::<Vec<_>>()
            .join(",");
        Ok(SegmentQueryResponse {
            text: format!("{body}."),
            masks,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Category;

    fn oracle() -> OracleEndpoint {
        let table = CategoryTable::new(
            ["sky", "cat", "road"]
                .iter()
                .enumerate()
                .map(|(i, n)| Category {
                    id: ClassId(i as u16),
                    name: n.to_string(),
                    aliases: vec![],
                })
                .collect(),
        )
        .unwrap();
        let map = LabelMap::new(2, 2, vec![0, 0, 65535, 2]).unwrap();
        OracleEndpoint::new(table, [("img".to_string(), map)].into_iter().collect())
    }

    #[test]
    fn answers_in_canonical_format() {
        let r = oracle()
            .submit("img", "<IMAGE> Can you segment the sky, cat in this image?")
            .unwrap();
        assert_eq!(r.text, "sky<SEG>,cat<NEG>.");
        assert_eq!(r.masks.len(), 1);
        assert_eq!(
            r.masks[0].decode().unwrap().bits(),
            &[true, true, false, false]
        );
    }

    #[test]
    fn rejects_unknown_image_and_query() {
        let o = oracle();
        assert!(matches!(
            o.submit("nope", "<IMAGE> Can you segment the sky in this image?"),
            Err(EndpointError::Rejected(_))
        ));
        assert!(o.submit("img", "hello").is_err());
    }

    #[test]
    fn drops_are_replayable() {
        let o = oracle().with_drops(1.0, 3);
        let r = o
            .submit(
                "img",
                "<IMAGE> Can you segment the sky, cat, road in this image?",
            )
            .unwrap();
        assert_eq!(r.text, "cat<NEG>.");
        assert!(r.masks.is_empty());

        let mut kept = 0;
        for i in 0..2000u32 {
            if !is_dropped(13, 0.5, &format!("im{i}"), ClassId(4)) {
                kept += 1;
            }
        }
        assert!((900..1100).contains(&kept), "{kept}");
        assert!(!is_dropped(13, 0.0, "x", ClassId(0)));
    }

    #[test]
    fn shuffle_is_deterministic() {
        let q = "<IMAGE> Can you segment the sky, cat, road in this image?";
        let a = oracle().with_shuffle(1).submit("img", q).unwrap();
        let b = oracle().with_shuffle(1).submit("img", q).unwrap();
        assert_eq!(a, b);
        let mut names: Vec<_> = a.text.trim_end_matches('.').split(',').collect();
        names.sort();
        assert_eq!(names, vec!["cat<NEG>", "road<SEG>", "sky<SEG>"]);
    }
}
