use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ChunkError;
use crate::data::ClassId;

/// How a category list is split into sub-queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChunkSpec {
    /// The whole list in one query (`N`).
    Whole,
    /// `N/k`: split into `k` chunks.
    Fraction(usize),
    /// At most this many classes per chunk.
    Size(usize),
}

impl FromStr for ChunkSpec {
    type Err = ChunkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || ChunkError::InvalidSpec(s.to_string());
        if s == "N" {
            return Ok(ChunkSpec::Whole);
        }
        if let Some(k) = s.strip_prefix("N/") {
            let k: usize = k.parse().map_err(|_| bad())?;
            return if k == 0 {
                Err(bad())
            } else {
                Ok(ChunkSpec::Fraction(k))
            };
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(bad()),
            Ok(n) => Ok(ChunkSpec::Size(n)),
        }
    }
}

impl fmt::Display for ChunkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChunkSpec::Whole => write!(f, "N"),
            ChunkSpec::Fraction(k) => write!(f, "N/{k}"),
            ChunkSpec::Size(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub chunks: Vec<Vec<ClassId>>,
    pub spec: ChunkSpec,
}

impl ChunkPlan {
    pub fn flatten(&self) -> Vec<ClassId> {
        self.chunks.iter().flatten().copied().collect()
    }
}

/// Split `ids` into contiguous chunks whose sizes differ by at most one,
/// larger chunks first.
pub fn plan_chunks(ids: &[ClassId], spec: ChunkSpec) -> Result<ChunkPlan, ChunkError> {
    if ids.is_empty() {
        return Err(ChunkError::EmptyList);
    }
    let mut seen = HashSet::with_capacity(ids.len());
    if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
        return Err(ChunkError::DuplicateId(*dup));
    }
    let n = ids.len();
    let count = match spec {
        ChunkSpec::Whole => 1,
        ChunkSpec::Fraction(0) | ChunkSpec::Size(0) => {
            return Err(ChunkError::InvalidSpec(spec.to_string()))
        }
        ChunkSpec::Fraction(k) => k.min(n),
        ChunkSpec::Size(s) => n.div_ceil(s),
    };
    let base = n / count;
    let remainder = n % count;
    let mut chunks = Vec::with_capacity(count);
    let mut start = 0;
    for i in 0..count {
        let len = base + usize::from(i < remainder);
        chunks.push(ids[start..start + len].to_vec());
        start += len;
    }
    Ok(ChunkPlan { chunks, spec })
}
