//! Length and balance statistics for a training corpus.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::builder::{parse_query, TrainingSample};
use crate::data::CategoryTable;
use crate::parser::{parse_response, Tag};

const CHAR_BIN: usize = 32;
const RATIO_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    /// Bin lower bound to count.
    pub histogram: BTreeMap<usize, usize>,
}

impl Summary {
    fn from_values(values: &[usize], bin: usize) -> Option<Self> {
        let min = *values.iter().min()?;
        let max = *values.iter().max()?;
        let mean = values.iter().sum::<usize>() as f64 / values.len() as f64;
        let mut histogram = BTreeMap::new();
        for &v in values {
            *histogram.entry(v / bin * bin).or_insert(0) += 1;
        }
        Some(Self {
            min,
            max,
            mean,
            histogram,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub samples: usize,
    pub query_names: Option<Summary>,
    pub response_items: Option<Summary>,
    pub query_chars: Option<Summary>,
    pub response_chars: Option<Summary>,
    pub seg_items: usize,
    pub neg_items: usize,
    /// `seg_items / (seg_items + neg_items)` over the whole corpus.
    pub positive_ratio: Option<f64>,
    /// Per-sample positive ratio histogram, keyed by the bin's lower edge in
    /// tenths (0 means [0.0, 0.1), 10 means exactly 1.0).
    pub positive_ratio_histogram: BTreeMap<usize, usize>,
    pub unresolved_items: usize,
    pub unrecognized_queries: usize,
}

pub fn corpus_stats(samples: &[TrainingSample], table: &CategoryTable) -> CorpusStats {
    let mut names = Vec::new();
    let mut items = Vec::new();
    let mut qchars = Vec::new();
    let mut rchars = Vec::new();
    let (mut seg, mut neg, mut unresolved, mut unrecognized) = (0, 0, 0, 0);
    let mut ratio_hist = BTreeMap::new();

    for s in samples {
        qchars.push(s.query.chars().count());
        rchars.push(s.response.chars().count());
        let query_names = match parse_query(&s.query) {
            Some(q) => q.names,
            None => {
                unrecognized += 1;
                Vec::new()
            }
        };
        names.push(query_names.len());
        let report = parse_response(&s.response, &query_names, table);
        items.push(report.items.len());
        let s_seg = report.items.iter().filter(|i| i.tag == Tag::Seg).count();
        seg += s_seg;
        neg += report.items.len() - s_seg;
        unresolved += report
            .items
            .iter()
            .filter(|i| i.resolved_id.is_none())
            .count();
        if !report.items.is_empty() {
            let ratio = s_seg as f64 / report.items.len() as f64;
            let bin = ((ratio * RATIO_BINS as f64).floor() as usize).min(RATIO_BINS);
            *ratio_hist.entry(bin).or_insert(0) += 1;
        }
    }

    CorpusStats {
        samples: samples.len(),
        query_names: Summary::from_values(&names, 1),
        response_items: Summary::from_values(&items, 1),
        query_chars: Summary::from_values(&qchars, CHAR_BIN),
        response_chars: Summary::from_values(&rchars, CHAR_BIN),
        seg_items: seg,
        neg_items: neg,
        positive_ratio: (seg + neg > 0).then(|| seg as f64 / (seg + neg) as f64),
        positive_ratio_histogram: ratio_hist,
        unresolved_items: unresolved,
        unrecognized_queries: unrecognized,
    }
}
