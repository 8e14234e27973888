//! Toolkit for complex-query segmentation assistants.
//!
//! * [`data`]: category tables, label maps, masks and manifests.
//! * [`builder`]: training queries/responses with `<SEG>`/`<NEG>` answers.
//! * [`parser`]: structured parsing and diagnostics of model responses.
//! * [`chunk`]: chunked inference against a pluggable model endpoint.
//! * [`metrics`]: mIoU, cIoU and gIoU.
//! * [`loss`]: reference values for the text + BCE + dice objective.

pub mod builder;
pub mod chunk;
pub mod data;
pub mod loss;
pub mod metrics;
pub mod parser;
pub mod rng;
pub mod stats;
pub mod synthetic;

pub use builder::{
    build_dataset, build_query, build_response, build_single_target_sample, parse_query,
    sample_class_list, BuilderConfig, SampleMode, TrainingSample,
};
pub use chunk::{
    plan_chunks, run_chunked, ChunkError, ChunkPlan, ChunkSpec, HttpEndpoint, InferConfig,
    MergedPrediction, ModelEndpoint, OracleEndpoint, Outcome, PredictionLine, RetryPolicy,
};
pub use data::{
    load_manifest, normalize_name, resolve_category, BinaryMask, CategoryTable, ClassId,
    ImageRecord, LabelMap, Manifest, MatchKind,
};
pub use loss::{bce, dice, text_ce, total_loss, LossWeights, MaskPair, TokenBatch};
pub use metrics::MetricAccumulator;
pub use parser::{parse_response, roundtrip_check, ParseReport, ParsedItem, Tag};
