//! Reference values for the joint training objective
//! `text_ce + lambda_bce * bce + lambda_dice * dice`.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
const DIST_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("token batch has {distributions} distributions, {targets} targets and {flags} flags")]
    BatchLength {
        distributions: usize,
        targets: usize,
        flags: usize,
    },
    #[error("distribution at position {position} sums to {sum}, not 1")]
    NotNormalized { position: usize, sum: f64 },
    #[error("target {target} at position {position} is outside a vocabulary of {vocab}")]
    TargetOutOfRange {
        position: usize,
        target: usize,
        vocab: usize,
    },
    #[error("probability {value} at index {index} is outside [0, 1]")]
    ProbabilityRange { index: usize, value: f64 },
    #[error("mask pair has {probs} predictions and {gt} targets for a {width}x{height} grid")]
    MaskShape {
        width: u32,
        height: u32,
        probs: usize,
        gt: usize,
    },
    #[error("weights must be non-negative and dice_epsilon positive")]
    BadWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_bce: f64,
    pub lambda_dice: f64,
    pub dice_epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_bce: 1.0,
            lambda_dice: 0.5,
            dice_epsilon: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let ok = self.lambda_bce >= 0.0 && self.lambda_dice >= 0.0 && self.dice_epsilon > 0.0;
        ok.then_some(()).ok_or(LossError::BadWeights)
    }
}

/// Next-token distributions with their targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBatch {
    pub distributions: Vec<Vec<f64>>,
    pub targets: Vec<usize>,
    /// Positions that contribute to the loss. Defaults to all.
    #[serde(default)]
    pub supervised: Vec<bool>,
}

impl TokenBatch {
    pub fn new(
        distributions: Vec<Vec<f64>>,
        targets: Vec<usize>,
        supervised: Vec<bool>,
    ) -> Result<Self, LossError> {
        let batch = Self {
            distributions,
            targets,
            supervised,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let n = self.distributions.len();
        if self.targets.len() != n || (!self.supervised.is_empty() && self.supervised.len() != n) {
            return Err(LossError::BatchLength {
                distributions: n,
                targets: self.targets.len(),
                flags: self.supervised.len(),
            });
        }
        for (position, (dist, &target)) in self.distributions.iter().zip(&self.targets).enumerate()
        {
            if let Some((index, &value)) = dist
                .iter()
                .enumerate()
                .find(|(_, p)| !(0.0..=1.0).contains(*p))
            {
                return Err(LossError::ProbabilityRange { index, value });
            }
            let sum: f64 = dist.iter().sum();
            if (sum - 1.0).abs() > DIST_TOLERANCE {
                return Err(LossError::NotNormalized { position, sum });
            }
            if target >= dist.len() {
                return Err(LossError::TargetOutOfRange {
                    position,
                    target,
                    vocab: dist.len(),
                });
            }
        }
        Ok(())
    }

    fn is_supervised(&self, position: usize) -> bool {
        self.supervised.get(position).copied().unwrap_or(true)
    }
}

/// Predicted foreground probabilities against a binary target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPair {
    pub width: u32,
    pub height: u32,
    pub pred: Vec<f64>,
    #[serde(with = "bits_as_ints")]
    pub gt: Vec<bool>,
}

mod bits_as_ints {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bits: &[bool], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(bits.iter().map(|&b| u8::from(b)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let raw = Vec::<u8>::deserialize(d)?;
        raw.into_iter()
            .map(|v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "mask value {other} is not 0 or 1"
                ))),
            })
            .collect()
    }
}

impl MaskPair {
    pub fn new(width: u32, height: u32, pred: Vec<f64>, gt: Vec<bool>) -> Result<Self, LossError> {
        let pair = Self {
            width,
            height,
            pred,
            gt,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let n = self.width as usize * self.height as usize;
        if self.pred.len() != n || self.gt.len() != n {
            return Err(LossError::MaskShape {
                width: self.width,
                height: self.height,
                probs: self.pred.len(),
                gt: self.gt.len(),
            });
        }
        if let Some((index, &value)) = self
            .pred
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(LossError::ProbabilityRange { index, value });
        }
        Ok(())
    }
}

// `0.0 - x` keeps a perfect prediction at +0.0 rather than -0.0.
fn nll(likelihood: f64) -> f64 {
    0.0 - likelihood.max(PROB_FLOOR).ln()
}

/// Mean negative log-likelihood of the targets over supervised positions.
pub fn text_ce(batch: &TokenBatch) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (pos, (dist, &target)) in batch.distributions.iter().zip(&batch.targets).enumerate() {
        if !batch.is_supervised(pos) {
            continue;
        }
        total += nll(dist[target]);
        count += 1;
    }
    if count == 0 {
        warn!("token batch has no supervised positions; text loss is 0");
        return 0.0;
    }
    total / count as f64
}

/// Mean per-pixel binary cross-entropy. The likelihood of the true label is
/// floored at [`PROB_FLOOR`], so confident correct pixels cost exactly 0.
pub fn bce(pair: &MaskPair) -> f64 {
    if pair.pred.is_empty() {
        return 0.0;
    }
    let sum: f64 = pair
        .pred
        .iter()
        .zip(&pair.gt)
        .map(|(&p, &g)| {
            let likelihood = if g { p } else { 1.0 - p };
            nll(likelihood)
        })
        .sum();
    sum / pair.pred.len() as f64
}

/// Smoothed soft dice loss `1 - (2 sum(p g) + eps) / (sum p + sum g + eps)`.
pub fn dice(pair: &MaskPair, eps: f64) -> f64 {
    let (mut inter, mut psum, mut gsum) = (0.0, 0.0, 0.0);
    for (&p, &g) in pair.pred.iter().zip(&pair.gt) {
        let g = if g { 1.0 } else { 0.0 };
        inter += p * g;
        psum += p;
        gsum += g;
    }
    1.0 - (2.0 * inter + eps) / (psum + gsum + eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub text_ce: f64,
    /// Mean over mask pairs.
    pub bce: f64,
    /// Mean over mask pairs.
    pub dice: f64,
    pub total: f64,
}

pub fn loss_breakdown(batch: &TokenBatch, pairs: &[MaskPair], w: &LossWeights) -> LossBreakdown {
    let text = text_ce(batch);
    let (mean_bce, mean_dice) = if pairs.is_empty() {
        (0.0, 0.0)
    } else {
        let n = pairs.len() as f64;
        (
            pairs.iter().map(bce).sum::<f64>() / n,
            pairs.iter().map(|p| dice(p, w.dice_epsilon)).sum::<f64>() / n,
        )
    };
    LossBreakdown {
        text_ce: text,
        bce: mean_bce,
        dice: mean_dice,
        total: text + w.lambda_bce * mean_bce + w.lambda_dice * mean_dice,
    }
}

pub fn total_loss(batch: &TokenBatch, pairs: &[MaskPair], w: &LossWeights) -> f64 {
    loss_breakdown(batch, pairs, w).total
}

/// JSON fixture consumed by the `loss` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossFixture {
    pub tokens: TokenBatch,
    #[serde(default)]
    pub masks: Vec<MaskPair>,
    #[serde(default)]
    pub weights: LossWeights,
}

impl LossFixture {
    pub fn evaluate(&self) -> Result<LossBreakdown, LossError> {
        self.weights.validate()?;
        self.tokens.validate()?;
        for m in &self.masks {
            m.validate()?;
        }
        Ok(loss_breakdown(&self.tokens, &self.masks, &self.weights))
    }
}
