use super::BinaryMask;
use crate::error::{Error, Result};

/// Per-class pixel counts of true positives, false positives and false negatives.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        ConfusionCounts {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    /// Adds one prediction/ground-truth pair, optionally restricted to `region` pixels.
    pub fn accumulate(
        &mut self,
        pred: &BinaryMask,
        gt: &BinaryMask,
        region: Option<&BinaryMask>,
    ) -> Result<()> {
        if pred.height() != gt.height() || region.is_some_and(|r| r.height() != gt.height()) {
            return Err(Error::dim("height", format!("{} vs {}", pred.height(), gt.height())));
        }
        if pred.width() != gt.width() || region.is_some_and(|r| r.width() != gt.width()) {
            return Err(Error::dim("width", format!("{} vs {}", pred.width(), gt.width())));
        }
        let k = self.num_classes();
        for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
            if region.is_some_and(|r| r.data()[i] == 0) {
                continue;
            }
            let (p, g) = (p as usize, g as usize);
            if p >= k || g >= k {
                return Err(Error::Validation(format!(
                    "label {} outside [0, {k})",
                    p.max(g)
                )));
            }
            if p == g {
                self.tp[p] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[g] += 1;
            }
        }
        Ok(())
    }

    /// IoU of one class; a class absent from both prediction and truth scores 1.
    pub fn iou(&self, class: usize) -> f64 {
        let denom = self.tp[class] + self.fp[class] + self.fn_[class];
        if denom == 0 {
            1.0
        } else {
            self.tp[class] as f64 / denom as f64
        }
    }

    /// Mean IoU over classes, as a percentage.
    pub fn miou(&self) -> f64 {
        let k = self.num_classes();
        if k == 0 {
            return 0.0;
        }
        100.0 * (0..k).map(|c| self.iou(c)).sum::<f64>() / k as f64
    }
}

fn confusion(
    pred: &[BinaryMask],
    gt: &[BinaryMask],
    regions: Option<&[BinaryMask]>,
    num_classes: usize,
) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() || regions.is_some_and(|r| r.len() != gt.len()) {
        return Err(Error::dim("batch", format!("{} predictions vs {} ground truths", pred.len(), gt.len())));
    }
    let mut counts = ConfusionCounts::new(num_classes);
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        counts.accumulate(p, g, regions.map(|r| &r[i]))?;
    }
    Ok(counts)
}

/// Mean intersection-over-union (percent) with confusion counts pooled over the batch.
pub fn miou(pred: &[BinaryMask], gt: &[BinaryMask], num_classes: usize) -> Result<f64> {
    Ok(confusion(pred, gt, None, num_classes)?.miou())
}

/// [`miou`] restricted to pixels flagged in the per-image `regions` masks.
pub fn miou_in_region(
    pred: &[BinaryMask],
    gt: &[BinaryMask],
    regions: &[BinaryMask],
    num_classes: usize,
) -> Result<f64> {
    Ok(confusion(pred, gt, Some(regions), num_classes)?.miou())
}
