use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Flat input offsets of each pooled maximum, kept for the backward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Shape,
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// 2×2 max-pooling with stride 2. Odd spatial sizes are rejected.
pub fn maxpool2x2<T: Element>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let [n, c, h, w] = input.shape();
    if h % 2 != 0 {
        return Err(Error::dim("height", format!("max-pool needs an even height, got {h}")));
    }
    if w % 2 != 0 {
        return Err(Error::dim("width", format!("max-pool needs an even width, got {w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut argmax = vec![0usize; n * c * ho * wo];
    let src = input.data();
    let dst = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let i0 = base + 2 * oy * w + 2 * ox;
                let mut best = i0;
                for i in [i0 + 1, i0 + w, i0 + w + 1] {
                    // first maximum wins on ties; NaN never wins
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                dst[o] = src[best];
                argmax[o] = best;
                o += 1;
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_shape: input.shape(),
            argmax,
        },
    ))
}

/// Routes the upstream gradient to the argmax position of each window.
pub fn maxpool2x2_backward<T: Element>(indices: &PoolIndices, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if upstream.len() != indices.argmax.len() {
        return Err(Error::dim(
            "height",
            format!(
                "upstream gradient {:?} does not match pooled output",
                upstream.shape()
            ),
        ));
    }
    let mut grad = Tensor::zeros(indices.input_shape);
    let g = grad.data_mut();
    for (&i, &u) in indices.argmax.iter().zip(upstream.data()) {
        g[i] = g[i] + u;
    }
    Ok(grad)
}
