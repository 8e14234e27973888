//! Chunked inference: split a class list into sub-queries, dispatch them to a
//! [`ModelEndpoint`], and merge the parsed answers per class.
//!
//! Chunks are disjoint, so merging is a keyed reduction and the result does
//! not depend on the order in which chunks complete.

mod endpoint;
mod oracle;
mod plan;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use endpoint::{
    EndpointError, HttpEndpoint, ModelEndpoint, SegmentQueryRequest, SegmentQueryResponse,
    WireMask, SEGMENT_QUERY_PATH,
};
pub use oracle::{image_class_key, is_dropped, Degradation, OracleEndpoint, DROP_DOMAIN};
pub use plan::{plan_chunks, ChunkPlan, ChunkSpec};

use crate::builder::{build_query, BuildError, SEG_TOKEN};
use crate::data::{format_rle, BinaryMask, CategoryTable, ClassId, MaskError};
use crate::parser::{parse_response, Tag};

#[derive(Debug, Error, PartialEq)]
pub enum ChunkError {
    #[error("cannot plan chunks for an empty class list")]
    EmptyList,
    #[error("class {0} appears more than once in the requested list")]
    DuplicateId(ClassId),
    #[error("invalid chunk spec {0:?} (expected N, N/k or a positive size)")]
    InvalidSpec(String),
    #[error("class {0} is not in the category table")]
    UnknownClass(ClassId),
    #[error(transparent)]
    Query(#[from] BuildError),
    #[error("chunk {chunk}: endpoint failed after {attempts} attempt(s): {source}")]
    Transport {
        chunk: usize,
        attempts: u32,
        source: EndpointError,
    },
    #[error("chunk {chunk}: response has {seg_tokens} <SEG> token(s) but {masks} mask(s)")]
    MaskCount {
        chunk: usize,
        seg_tokens: usize,
        masks: usize,
    },
    #[error("chunk {chunk}: mask {index} is invalid: {source}")]
    BadMask {
        chunk: usize,
        index: usize,
        source: MaskError,
    },
}

impl ChunkError {
    pub fn is_transport(&self) -> bool {
        matches!(self, ChunkError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_backoff: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferConfig {
    pub spec: ChunkSpec,
    pub template_id: usize,
    pub retry: RetryPolicy,
    /// Maximum number of chunks in flight.
    pub parallelism: usize,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            spec: ChunkSpec::Whole,
            template_id: 0,
            retry: RetryPolicy::default(),
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Seg,
    Neg,
    Unanswered,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPrediction {
    pub class_id: ClassId,
    pub outcome: Outcome,
    /// Present iff `outcome` is [`Outcome::Seg`].
    pub mask: Option<BinaryMask>,
    /// Index of the chunk that queried this class.
    pub chunk: usize,
}

/// Per-class answers for one image, in request order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedPrediction {
    pub image_id: String,
    pub classes: Vec<ClassPrediction>,
}

/// One line of the prediction JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub image_id: String,
    pub class_id: ClassId,
    pub outcome: Outcome,
    pub rle: Option<String>,
}

impl MergedPrediction {
    pub fn get(&self, class: ClassId) -> Option<&ClassPrediction> {
        self.classes.iter().find(|c| c.class_id == class)
    }

    pub fn to_lines(&self) -> Vec<PredictionLine> {
        self.classes
            .iter()
            .map(|c| PredictionLine {
                image_id: self.image_id.clone(),
                class_id: c.class_id,
                outcome: c.outcome,
                rle: c.mask.as_ref().map(|m| format_rle(&m.rle_encode())),
            })
            .collect()
    }

    /// JSONL rendering without provenance; equal across chunkings whenever the
    /// per-class answers are equal.
    pub fn canonical_jsonl(&self) -> String {
        self.to_lines()
            .iter()
            .map(|l| serde_json::to_string(l).expect("serializable") + "\n")
            .collect()
    }
}

type ChunkResult = Result<HashMap<ClassId, ChunkAnswer>, ChunkError>;

struct ChunkAnswer {
    outcome: Outcome,
    mask: Option<BinaryMask>,
}

fn submit_with_retry(
    endpoint: &dyn ModelEndpoint,
    image_id: &str,
    query: &str,
    chunk: usize,
    retry: RetryPolicy,
) -> Result<SegmentQueryResponse, ChunkError> {
    let mut attempt = 0u32;
    loop {
        match endpoint.submit(image_id, query) {
            Ok(resp) => return Ok(resp),
            Err(err) if attempt < retry.max_retries => {
                let wait = retry.base_backoff * 2u32.saturating_pow(attempt);
                warn!("image {image_id:?} chunk {chunk}: {err}; retrying in {wait:?}");
                thread::sleep(wait);
                attempt += 1;
            }
            Err(source) => {
                return Err(ChunkError::Transport {
                    chunk,
                    attempts: attempt + 1,
                    source,
                })
            }
        }
    }
}

fn run_one_chunk(
    image_id: &str,
    chunk_index: usize,
    ids: &[ClassId],
    table: &CategoryTable,
    endpoint: &dyn ModelEndpoint,
    cfg: &InferConfig,
) -> ChunkResult {
    let names: Vec<&str> = ids
        .iter()
        .map(|&id| table.name(id).ok_or(ChunkError::UnknownClass(id)))
        .collect::<Result<_, _>>()?;
    let query = build_query(&names, cfg.template_id)?;
    let resp = submit_with_retry(endpoint, image_id, &query, chunk_index, cfg.retry)?;

    let seg_tokens = resp.text.matches(SEG_TOKEN).count();
    if seg_tokens != resp.masks.len() {
        return Err(ChunkError::MaskCount {
            chunk: chunk_index,
            seg_tokens,
            masks: resp.masks.len(),
        });
    }
    let report = parse_response(&resp.text, &names, table);
    debug!(
        "image {image_id:?} chunk {chunk_index}: {} item(s), {} missing, {} extra",
        report.items.len(),
        report.missing.len(),
        report.extra.len()
    );

    let mut answers = HashMap::new();
    for item in report.first_occurrences() {
        let Some(id) = item.resolved_id.filter(|id| ids.contains(id)) else {
            continue;
        };
        let answer = match (item.tag, item.seg_index) {
            (Tag::Seg, Some(index)) => {
                let mask = resp.masks[index]
                    .decode()
                    .map_err(|source| ChunkError::BadMask {
                        chunk: chunk_index,
                        index,
                        source,
                    })?;
                ChunkAnswer {
                    outcome: Outcome::Seg,
                    mask: Some(mask),
                }
            }
            _ => ChunkAnswer {
                outcome: Outcome::Neg,
                mask: None,
            },
        };
        answers.insert(id, answer);
    }
    Ok(answers)
}

/// Query `ids` for one image in chunks and merge the answers.
///
/// Classes the model never answers are recorded as [`Outcome::Unanswered`];
/// names outside the chunk's query are ignored.
pub fn run_chunked(
    image_id: &str,
    ids: &[ClassId],
    table: &CategoryTable,
    endpoint: &dyn ModelEndpoint,
    cfg: &InferConfig,
) -> Result<MergedPrediction, ChunkError> {
    let plan = plan_chunks(ids, cfg.spec)?;
    let n = plan.chunks.len();
    let results: Mutex<Vec<Option<ChunkResult>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = cfg.parallelism.clamp(1, n);

    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = run_one_chunk(image_id, i, &plan.chunks[i], table, endpoint, cfg);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });

    let mut merged: HashMap<ClassId, (usize, ChunkAnswer)> = HashMap::new();
    for (i, r) in results.into_inner().unwrap().into_iter().enumerate() {
        let answers = r.expect("every chunk ran")?;
        for (id, a) in answers {
            merged.insert(id, (i, a));
        }
    }

    let chunk_of: HashMap<ClassId, usize> = plan
        .chunks
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.iter().map(move |&id| (id, i)))
        .collect();
    let classes = ids
        .iter()
        .map(|&id| match merged.remove(&id) {
            Some((chunk, a)) => ClassPrediction {
                class_id: id,
                outcome: a.outcome,
                mask: a.mask,
                chunk,
            },
            None => ClassPrediction {
                class_id: id,
                outcome: Outcome::Unanswered,
                mask: None,
                chunk: chunk_of[&id],
            },
        })
        .collect();
    Ok(MergedPrediction {
        image_id: image_id.to_string(),
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Category, LabelMap};
    use std::sync::atomic::AtomicU32;

    fn table() -> CategoryTable {
        CategoryTable::new(
            ["sky", "cat", "road", "tree", "car"]
                .iter()
                .enumerate()
                .map(|(i, n)| Category {
                    id: ClassId(i as u16),
                    name: n.to_string(),
                    aliases: vec![],
                })
                .collect(),
        )
        .unwrap()
    }

    fn labelmap() -> LabelMap {
        LabelMap::new(3, 2, vec![0, 0, 2, 2, 3, 65535]).unwrap()
    }

    fn oracle() -> OracleEndpoint {
        OracleEndpoint::new(table(), [("img".to_string(), labelmap())].into())
    }

    fn cfg(spec: ChunkSpec) -> InferConfig {
        InferConfig {
            spec,
            retry: RetryPolicy {
                max_retries: 2,
                base_backoff: Duration::ZERO,
            },
            ..Default::default()
        }
    }

    #[test]
    fn oracle_gives_exact_masks() {
        let t = table();
        let pred =
            run_chunked("img", &t.ids(), &t, &oracle(), &cfg(ChunkSpec::Fraction(2))).unwrap();
        for c in &pred.classes {
            let present = labelmap().present_ids().contains(&c.class_id);
            if present {
                assert_eq!(c.outcome, Outcome::Seg);
                assert_eq!(c.mask.as_ref().unwrap(), &labelmap().binarize(c.class_id));
            } else {
                assert_eq!(c.outcome, Outcome::Neg);
                assert!(c.mask.is_none());
            }
        }
        assert_eq!(
            pred.classes.iter().map(|c| c.chunk).collect::<Vec<_>>(),
            vec![0, 0, 0, 1, 1]
        );
    }

    #[test]
    fn chunk_invariance_and_parallelism() {
        let t = table();
        let reference = run_chunked("img", &t.ids(), &t, &oracle(), &cfg(ChunkSpec::Whole))
            .unwrap()
            .canonical_jsonl();
        for spec in [
            ChunkSpec::Fraction(2),
            ChunkSpec::Fraction(3),
            ChunkSpec::Fraction(4),
            ChunkSpec::Size(1),
        ] {
            for parallelism in [1, 4] {
                let c = InferConfig {
                    parallelism,
                    ..cfg(spec)
                };
                let got = run_chunked("img", &t.ids(), &t, &oracle(), &c).unwrap();
                assert_eq!(got.canonical_jsonl(), reference, "{spec} x{parallelism}");
            }
        }
    }

    struct Scripted<F: Fn(&str) -> Result<SegmentQueryResponse, EndpointError> + Send + Sync>(F);

    impl<F: Fn(&str) -> Result<SegmentQueryResponse, EndpointError> + Send + Sync> ModelEndpoint
        for Scripted<F>
    {
        fn submit(&self, _: &str, q: &str) -> Result<SegmentQueryResponse, EndpointError> {
            (self.0)(q)
        }
    }

    fn wire(bits: &[bool]) -> WireMask {
        WireMask::from_mask(&BinaryMask::from_bits(bits.len() as u32, 1, bits.to_vec()).unwrap())
    }

    #[test]
    fn mask_count_mismatch_names_chunk() {
        let t = table();
        let ep = Scripted(|q: &str| {
            if q.contains("sky") {
                Ok(SegmentQueryResponse {
                    text: "sky<NEG>,cat<NEG>,road<NEG>.".into(),
                    masks: vec![],
                })
            } else {
                Ok(SegmentQueryResponse {
                    text: "tree<SEG>,car<SEG>,tree<SEG>.".into(),
                    masks: vec![wire(&[true]), wire(&[false])],
                })
            }
        });
        let err = run_chunked("img", &t.ids(), &t, &ep, &cfg(ChunkSpec::Fraction(2))).unwrap_err();
        assert_eq!(
            err,
            ChunkError::MaskCount {
                chunk: 1,
                seg_tokens: 3,
                masks: 2
            }
        );
        assert!(err.to_string().contains("chunk 1"));
    }

    #[test]
    fn unanswered_extra_and_duplicates() {
        let t = table();
        let ep = Scripted(|_: &str| {
            Ok(SegmentQueryResponse {
                text: "car<SEG>,sky<SEG>,sky<SEG>,unicorn<NEG>.".into(),
                masks: vec![
                    wire(&[true, false]),
                    wire(&[false, true]),
                    wire(&[true, true]),
                ],
            })
        });
        let ids = [ClassId(0), ClassId(1)];
        let pred = run_chunked("img", &ids, &t, &ep, &cfg(ChunkSpec::Whole)).unwrap();
        assert_eq!(pred.classes.len(), 2);
        let sky = pred.get(ClassId(0)).unwrap();
        assert_eq!(sky.outcome, Outcome::Seg);
        assert_eq!(sky.mask.as_ref().unwrap().bits(), &[false, true]);
        assert_eq!(pred.get(ClassId(1)).unwrap().outcome, Outcome::Unanswered);
        assert!(pred.get(ClassId(4)).is_none());
        let lines = pred.to_lines();
        assert_eq!(lines[0].rle.as_deref(), Some("1,1"));
        assert_eq!(lines[1].rle, None);
    }

    #[test]
    fn retries_then_surfaces_transport_error() {
        let t = table();
        let calls = AtomicU32::new(0);
        let flaky = Scripted(|_: &str| {
            if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(EndpointError::Transport("reset".into()))
            } else {
                Ok(SegmentQueryResponse {
                    text: "sky<NEG>.".into(),
                    masks: vec![],
                })
            }
        });
        let pred = run_chunked("img", &[ClassId(0)], &t, &flaky, &cfg(ChunkSpec::Whole)).unwrap();
        assert_eq!(pred.classes[0].outcome, Outcome::Neg);
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        let down = Scripted(|_: &str| {
            Err(EndpointError::Status {
                status: 503,
                body: String::new(),
            })
        });
        let err =
            run_chunked("img", &t.ids(), &t, &down, &cfg(ChunkSpec::Fraction(2))).unwrap_err();
        assert!(err.is_transport());
        assert!(matches!(
            err,
            ChunkError::Transport {
                chunk: 0,
                attempts: 3,
                ..
            }
        ));
    }

    #[test]
    fn shuffled_oracle_still_merges_identically() {
        let t = table();
        let plain = run_chunked("img", &t.ids(), &t, &oracle(), &cfg(ChunkSpec::Whole)).unwrap();
        let shuffled = run_chunked(
            "img",
            &t.ids(),
            &t,
            &oracle().with_shuffle(5),
            &cfg(ChunkSpec::Whole),
        )
        .unwrap();
        assert_eq!(plain.canonical_jsonl(), shuffled.canonical_jsonl());
    }
}
