use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Source taps `(lo, hi, frac)` for each output coordinate along one axis,
/// half-pixel aligned (`src = (dst + 0.5) / factor - 0.5`, clamped to the edge).
fn taps(size: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..size * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(size - 1);
            let hi = (lo + 1).min(size - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn check_factor(factor: usize) -> Result<()> {
    if factor < 1 {
        return Err(Error::Config(format!("upsample factor must be >= 1, got {factor}")));
    }
    Ok(())
}

/// Bilinear upsampling by an integer factor.
pub fn bilinear_upsample<T: Element>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    check_factor(factor)?;
    let [n, c, h, w] = input.shape();
    let (ho, wo) = (h * factor, w * factor);
    let ty = taps(h, factor);
    let tx = taps(w, factor);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for b in 0..n {
        for ch in 0..c {
            let src = input.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::from_f64(fy);
                let r0 = &src[y0 * w..(y0 + 1) * w];
                let r1 = &src[y1 * w..(y1 + 1) * w];
                let row = &mut dst[oy * wo..(oy + 1) * wo];
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::from_f64(fx);
                    let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                    row[ox] = top + (bot - top) * fy;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`bilinear_upsample`]: scatters each output gradient onto its four taps.
pub fn bilinear_upsample_backward<T: Element>(
    upstream: &Tensor<T>,
    input_hw: (usize, usize),
    factor: usize,
) -> Result<Tensor<T>> {
    check_factor(factor)?;
    let [n, c, ho, wo] = upstream.shape();
    let (h, w) = input_hw;
    if ho != h * factor {
        return Err(Error::dim("height", format!("{ho} is not {h}×{factor}")));
    }
    if wo != w * factor {
        return Err(Error::dim("width", format!("{wo} is not {w}×{factor}")));
    }
    let ty = taps(h, factor);
    let tx = taps(w, factor);
    let mut grad = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let up = upstream.plane(b, ch);
            let g = grad.plane_mut(b, ch);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::from_f64(fy);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::from_f64(fx);
                    let u = up[oy * wo + ox];
                    let top = u * (T::one() - fy);
                    let bot = u * fy;
                    g[y0 * w + x0] = g[y0 * w + x0] + top * (T::one() - fx);
                    g[y0 * w + x1] = g[y0 * w + x1] + top * fx;
                    g[y1 * w + x0] = g[y1 * w + x0] + bot * (T::one() - fx);
                    g[y1 * w + x1] = g[y1 * w + x1] + bot * fx;
                }
            }
        }
    }
    Ok(grad)
}
