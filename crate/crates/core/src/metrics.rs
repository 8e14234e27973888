//! mIoU, cIoU and gIoU.
//!
//! * mIoU: mean over classes of accumulated intersection over accumulated
//!   union; classes whose union is zero on the evaluated set are skipped.
//! * cIoU: total intersection over total union across all samples.
//! * gIoU: mean of per-sample IoU, where an empty prediction against an empty
//!   target scores 1.0 and an empty prediction against a non-empty target 0.0.
//!
//! Ignore pixels (class 65535) count toward neither intersection nor union.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::{MergedPrediction, Outcome};
use crate::data::{BinaryMask, ClassId, LabelMap};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("{context}: mask is {actual:?} but ground truth is {expected:?}")]
    DimensionMismatch {
        context: String,
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("{0} is undefined: nothing with a non-zero union was accumulated")]
    Undefined(&'static str),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IouSums {
    pub intersection: u64,
    pub union: u64,
}

impl IouSums {
    pub fn iou(&self) -> Option<f64> {
        (self.union > 0).then(|| self.intersection as f64 / self.union as f64)
    }

    fn add(&mut self, other: IouSums) {
        self.intersection += other.intersection;
        self.union += other.union;
    }
}

/// Intersection and union of two masks over the pixels flagged valid.
pub fn mask_sums(
    pred: &BinaryMask,
    gt: &BinaryMask,
    valid: Option<&[bool]>,
) -> Result<IouSums, MetricError> {
    if pred.dims() != gt.dims() {
        return Err(MetricError::DimensionMismatch {
            context: "mask pair".into(),
            expected: gt.dims(),
            actual: pred.dims(),
        });
    }
    let mut sums = IouSums::default();
    for (i, (&p, &g)) in pred.bits().iter().zip(gt.bits()).enumerate() {
        if valid.is_some_and(|v| !v[i]) {
            continue;
        }
        sums.intersection += u64::from(p && g);
        sums.union += u64::from(p || g);
    }
    Ok(sums)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricAccumulator {
    pub per_class: BTreeMap<ClassId, IouSums>,
    pub cum_intersection: u64,
    pub cum_union: u64,
    pub per_image_ious: Vec<f64>,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add one image's semantic prediction. Classes answered NEG or not at all
    /// count as empty predictions.
    pub fn accumulate_semantic(
        &mut self,
        pred: &MergedPrediction,
        gt: &LabelMap,
        eval_ids: &[ClassId],
    ) -> Result<(), MetricError> {
        let dims = (gt.width(), gt.height());
        let valid: Vec<bool> = gt.valid_pixels().collect();
        for &class in eval_ids {
            let mask = pred
                .get(class)
                .filter(|c| c.outcome == Outcome::Seg)
                .and_then(|c| c.mask.as_ref());
            if let Some(m) = mask {
                if m.dims() != dims {
                    return Err(MetricError::DimensionMismatch {
                        context: format!("image {:?} class {class}", pred.image_id),
                        expected: dims,
                        actual: m.dims(),
                    });
                }
            }
            let mut sums = IouSums::default();
            for (i, &px) in gt.pixels().iter().enumerate() {
                if !valid[i] {
                    continue;
                }
                let p = mask.is_some_and(|m| m.bits()[i]);
                let g = px == class.0;
                sums.intersection += u64::from(p && g);
                sums.union += u64::from(p || g);
            }
            self.per_class.entry(class).or_default().add(sums);
        }
        Ok(())
    }

    /// Add one referring sample.
    pub fn accumulate_referring(
        &mut self,
        pred: &BinaryMask,
        gt: &BinaryMask,
    ) -> Result<(), MetricError> {
        self.accumulate_referring_masked(pred, gt, None)
    }

    /// As [`accumulate_referring`](Self::accumulate_referring), restricted to
    /// pixels flagged in `valid`.
    pub fn accumulate_referring_masked(
        &mut self,
        pred: &BinaryMask,
        gt: &BinaryMask,
        valid: Option<&[bool]>,
    ) -> Result<(), MetricError> {
        let sums = mask_sums(pred, gt, valid)?;
        self.cum_intersection += sums.intersection;
        self.cum_union += sums.union;
        self.per_image_ious.push(sums.iou().unwrap_or(1.0));
        Ok(())
    }

    /// Combine with another accumulator. Sums are associative; per-sample
    /// IoUs are appended in order.
    pub fn merge(&mut self, other: MetricAccumulator) {
        for (class, sums) in other.per_class {
            self.per_class.entry(class).or_default().add(sums);
        }
        self.cum_intersection += other.cum_intersection;
        self.cum_union += other.cum_union;
        self.per_image_ious.extend(other.per_image_ious);
    }

    /// IoU of every accumulated class with a non-zero union.
    pub fn per_class_iou(&self) -> BTreeMap<ClassId, f64> {
        self.per_class
            .iter()
            .filter_map(|(&c, s)| s.iou().map(|v| (c, v)))
            .collect()
    }

    /// Mean IoU over `eval_ids` (all accumulated classes when `None`).
    pub fn finalize_miou(&self, eval_ids: Option<&[ClassId]>) -> Result<f64, MetricError> {
        let ious: Vec<f64> = match eval_ids {
            Some(ids) => ids
                .iter()
                .filter_map(|c| self.per_class.get(c).and_then(IouSums::iou))
                .collect(),
            None => self.per_class.values().filter_map(IouSums::iou).collect(),
        };
        if ious.is_empty() {
            return Err(MetricError::Undefined("mIoU"));
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }

    pub fn finalize_ciou(&self) -> Result<f64, MetricError> {
        if self.cum_union == 0 {
            return Err(MetricError::Undefined("cIoU"));
        }
        Ok(self.cum_intersection as f64 / self.cum_union as f64)
    }

    pub fn finalize_giou(&self) -> Result<f64, MetricError> {
        if self.per_image_ious.is_empty() {
            return Err(MetricError::Undefined("gIoU"));
        }
        Ok(self.per_image_ious.iter().sum::<f64>() / self.per_image_ious.len() as f64)
    }
}
