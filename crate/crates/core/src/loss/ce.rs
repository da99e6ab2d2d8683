use super::{BinaryMask, BoundaryWeightMap};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Loss value and its gradient with respect to the logits.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Tensor<f64>,
}

/// Pixel-weighted softmax cross-entropy averaged over every pixel of the batch:
///
/// `L = -(1/M) Σ_i w_i · log softmax(m_i)[label_i]`
///
/// The gradient with respect to the logits is `(w_i / M)·(softmax(m_i) - onehot(label_i))`.
pub fn weighted_ce_loss(
    logits: &Tensor<f64>,
    labels: &[BinaryMask],
    weights: &[BoundaryWeightMap],
) -> Result<LossOutput> {
    let [n, c, h, w] = logits.shape();
    if labels.len() != n {
        return Err(Error::dim("batch", format!("{} label maps for {n} logit maps", labels.len())));
    }
    if weights.len() != n {
        return Err(Error::dim("batch", format!("{} weight maps for {n} logit maps", weights.len())));
    }
    for (lab, wm) in labels.iter().zip(weights) {
        if lab.height() != h || wm.height() != h {
            return Err(Error::dim("height", format!("labels/weights do not match logits height {h}")));
        }
        if lab.width() != w || wm.width() != w {
            return Err(Error::dim("width", format!("labels/weights do not match logits width {w}")));
        }
        if let Some(&bad) = lab.data().iter().find(|&&v| v as usize >= c) {
            return Err(Error::Validation(format!("label {bad} outside [0, {c})")));
        }
        if let Some(&bad) = wm.weights().iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Validation(format!("pixel weight {bad} is not strictly positive")));
        }
    }

    let hw = h * w;
    let m = (n * hw) as f64;
    let src = logits.data();
    let mut grad = Tensor::zeros(logits.shape());
    let g = grad.data_mut();
    let mut total = 0.0;
    let mut probs = vec![0.0; c];
    for b in 0..n {
        let base = b * c * hw;
        let lab = labels[b].data();
        let wts = weights[b].weights();
        for p in 0..hw {
            let mut arg = 0;
            for ch in 1..c {
                if src[base + ch * hw + p] > src[base + arg * hw + p] {
                    arg = ch;
                }
            }
            let max = src[base + arg * hw + p];
            // the argmax term is exactly 1; summing the rest separately keeps log1p precise
            let mut rest = 0.0;
            for ch in 0..c {
                probs[ch] = (src[base + ch * hw + p] - max).exp();
                if ch != arg {
                    rest += probs[ch];
                }
            }
            let sum = 1.0 + rest;
            let target = lab[p] as usize;
            let log_p = src[base + target * hw + p] - max - rest.ln_1p();
            total -= wts[p] * log_p;
            let scale = wts[p] / m;
            for ch in 0..c {
                let onehot = if ch == target { 1.0 } else { 0.0 };
                g[base + ch * hw + p] = scale * (probs[ch] / sum - onehot);
            }
        }
    }
    Ok(LossOutput { loss: total / m, grad })
}
