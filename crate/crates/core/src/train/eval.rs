use std::path::Path;

use serde::Serialize;

use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::loss::{BinaryMask, ConfusionCounts};
use crate::model::Model;
use crate::tensor::{Element, Tensor};

const EVAL_BATCH: usize = 8;

/// Argmax over channels for each image of a `(N, C, H, W)` logit tensor; ties go to
/// the lower class index.
pub fn predict_labels<T: Element>(logits: &Tensor<T>) -> Vec<Vec<u8>> {
    let [n, c, h, w] = logits.shape();
    (0..n)
        .map(|b| {
            (0..h * w)
                .map(|i| {
                    let mut best = 0;
                    for k in 1..c {
                        if logits.plane(b, k)[i] > logits.plane(b, best)[i] {
                            best = k;
                        }
                    }
                    best as u8
                })
                .collect()
        })
        .collect()
}

/// Binary predictions; requires two-class logits.
pub fn predict_masks<T: Element>(logits: &Tensor<T>) -> Result<Vec<BinaryMask>> {
    let [_, c, h, w] = logits.shape();
    if c != 2 {
        return Err(Error::dim("channels", format!("binary prediction needs 2 logit channels, got {c}")));
    }
    predict_labels(logits)
        .into_iter()
        .map(|labels| BinaryMask::new(h, w, labels))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageScore {
    pub id: String,
    pub miou: f64,
    pub iou_background: f64,
    pub iou_portrait: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Mean over images of each image's mIoU (percent).
    pub miou: f64,
    /// mIoU of the confusion counts pooled over the whole split (percent).
    pub pooled_miou: f64,
    pub per_image: Vec<ImageScore>,
}

impl EvalReport {
    /// Scores predictions against ground truth, image by image.
    pub fn from_predictions(ids: &[String], pred: &[BinaryMask], gt: &[BinaryMask]) -> Result<Self> {
        if ids.len() != pred.len() || pred.len() != gt.len() {
            return Err(Error::dim(
                "batch",
                format!("{} ids, {} predictions, {} ground truths", ids.len(), pred.len(), gt.len()),
            ));
        }
        let mut pooled = ConfusionCounts::new(2);
        let mut per_image = Vec::with_capacity(ids.len());
        for ((id, p), g) in ids.iter().zip(pred).zip(gt) {
            let mut counts = ConfusionCounts::new(2);
            counts.accumulate(p, g, None)?;
            pooled.accumulate(p, g, None)?;
            per_image.push(ImageScore {
                id: id.clone(),
                miou: counts.miou(),
                iou_background: 100.0 * counts.iou(0),
                iou_portrait: 100.0 * counts.iou(1),
            });
        }
        let miou = if per_image.is_empty() {
            0.0
        } else {
            per_image.iter().map(|s| s.miou).sum::<f64>() / per_image.len() as f64
        };
        Ok(EvalReport {
            miou,
            pooled_miou: pooled.miou(),
            per_image,
        })
    }

    /// Per-image CSV followed by `mean` and `pooled` summary rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::format(path, e.to_string());
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        for row in &self.per_image {
            w.serialize(row).map_err(io)?;
        }
        let blank = String::new();
        w.write_record(["mean", &self.miou.to_string(), &blank, &blank]).map_err(io)?;
        w.write_record(["pooled", &self.pooled_miou.to_string(), &blank, &blank]).map_err(io)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Eval-mode forward over `dataset` with argmax predictions.
pub fn evaluate_model<T: Element>(model: &Model<T>, dataset: &Dataset) -> Result<EvalReport> {
    let mut ids = Vec::with_capacity(dataset.len());
    let mut preds = Vec::with_capacity(dataset.len());
    let mut gts = Vec::with_capacity(dataset.len());
    for batch in batch_iter(dataset, EVAL_BATCH, None, false)? {
        let batch = batch?;
        let logits = model.forward(&batch.images.cast::<T>())?;
        preds.extend(predict_masks(&logits)?);
        ids.extend(batch.ids);
        gts.extend(batch.masks);
    }
    EvalReport::from_predictions(&ids, &preds, &gts)
}

/// Scores the ground truth against itself; always 100. Used to test the reporting path.
pub fn evaluate_identity(dataset: &Dataset) -> Result<EvalReport> {
    let ids: Vec<String> = dataset.samples.iter().map(|s| s.id.clone()).collect();
    let masks: Vec<BinaryMask> = dataset.samples.iter().map(|s| s.mask.clone()).collect();
    EvalReport::from_predictions(&ids, &masks, &masks)
}
