use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Convolution weights plus the geometry they are applied with.
///
/// Weight layout is `(c_out, c_in, k_h, k_w)`; the bias, when present, has
/// shape `(1, c_out, 1, 1)`. The operation is a cross-correlation (no kernel flip).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T = f64> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    /// Zero padding along (height, width).
    pub padding: (usize, usize),
    pub dilation: usize,
}

impl<T: Element> ConvKernel<T> {
    pub fn new(
        weight: Tensor<T>,
        bias: Option<Tensor<T>>,
        stride: usize,
        padding: (usize, usize),
        dilation: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if dilation == 0 {
            return Err(Error::Config("dilation must be positive".into()));
        }
        if let Some(b) = &bias {
            if b.shape() != [1, weight.batch(), 1, 1] {
                return Err(Error::dim(
                    "channels",
                    format!(
                        "bias shape {:?} does not match {} output channels",
                        b.shape(),
                        weight.batch()
                    ),
                ));
            }
        }
        Ok(ConvKernel {
            weight,
            bias,
            stride,
            padding,
            dilation,
        })
    }

    /// Zero-initialised kernel of the given geometry.
    pub fn zeros(
        c_out: usize,
        c_in: usize,
        (kh, kw): (usize, usize),
        bias: bool,
        stride: usize,
        padding: (usize, usize),
        dilation: usize,
    ) -> Result<Self> {
        let weight = Tensor::from_vec([c_out, c_in, kh, kw], vec![T::zero(); c_out * c_in * kh * kw])?;
        let bias = bias.then(|| Tensor::zeros([1, c_out, 1, 1]));
        Self::new(weight, bias, stride, padding, dilation)
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    #[inline]
    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    #[inline]
    pub fn kernel_hw(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    /// Receptive extent `(k - 1)·d + 1` along height and width.
    pub fn extent(&self) -> (usize, usize) {
        let (kh, kw) = self.kernel_hw();
        ((kh - 1) * self.dilation + 1, (kw - 1) * self.dilation + 1)
    }

    /// Spatial output size for an `h×w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (eh, ew) = self.extent();
        let span = |size: usize, pad: usize, ext: usize, axis: &str| -> Result<usize> {
            let padded = size + 2 * pad;
            if padded < ext {
                return Err(Error::Config(format!(
                    "{axis}: padded input {padded} is smaller than the kernel extent {ext}"
                )));
            }
            Ok((padded - ext) / self.stride + 1)
        };
        Ok((
            span(h, self.padding.0, eh, "height")?,
            span(w, self.padding.1, ew, "width")?,
        ))
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_hw() == (1, 1) && self.stride == 1 && self.padding == (0, 0)
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize)> {
        if input.channels() != self.in_channels() {
            return Err(Error::dim(
                "channels",
                format!(
                    "input has {} channels, kernel expects {}",
                    input.channels(),
                    self.in_channels()
                ),
            ));
        }
        self.output_hw(input.height(), input.width())
    }
}

/// Forward state needed by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct ConvContext<T = f64> {
    input: Tensor<T>,
    out_hw: (usize, usize),
}

impl<T: Element> ConvContext<T> {
    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }
}

/// Gradients produced by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct ConvGrads<T = f64> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Valid output range `[lo, hi)` along one axis for a tap at input offset `off`.
#[inline]
fn valid_range(off: isize, stride: usize, size: usize, out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off < 0 { ((-off) + s - 1) / s } else { 0 };
    let last = size as isize - 1 - off;
    if last < 0 {
        return (0, 0);
    }
    let hi = ((last / s) + 1).min(out as isize);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// Unfolds the input into a `(c_in·k_h·k_w) × (n·h_out·w_out)` matrix.
fn im2col<T: Element>(x: &Tensor<T>, k: &ConvKernel<T>, (ho, wo): (usize, usize)) -> Vec<T> {
    let [n, c_in, h, w] = x.shape();
    let (kh, kw) = k.kernel_hw();
    let cols = n * ho * wo;
    let mut col = vec![T::zero(); c_in * kh * kw * cols];
    let (s, d) = (k.stride, k.dilation);
    for ci in 0..c_in {
        for ky in 0..kh {
            let off_y = (ky * d) as isize - k.padding.0 as isize;
            let (oy0, oy1) = valid_range(off_y, s, h, ho);
            for kx in 0..kw {
                let off_x = (kx * d) as isize - k.padding.1 as isize;
                let (ox0, ox1) = valid_range(off_x, s, w, wo);
                if ox0 == ox1 {
                    continue;
                }
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for b in 0..n {
                    let plane = x.plane(b, ci);
                    for oy in oy0..oy1 {
                        let iy = (oy * s) as isize + off_y;
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let base = (b * ho + oy) * wo;
                        if s == 1 {
                            let ix0 = (ox0 as isize + off_x) as usize;
                            dst[base + ox0..base + ox1]
                                .copy_from_slice(&src[ix0..ix0 + (ox1 - ox0)]);
                        } else {
                            for ox in ox0..ox1 {
                                dst[base + ox] = src[((ox * s) as isize + off_x) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Folds a column-gradient matrix back onto the input, accumulating overlaps.
fn col2im<T: Element>(
    col: &[T],
    shape: [usize; 4],
    k: &ConvKernel<T>,
    (ho, wo): (usize, usize),
) -> Tensor<T> {
    let [n, c_in, h, w] = shape;
    let (kh, kw) = k.kernel_hw();
    let cols = n * ho * wo;
    let mut out = Tensor::zeros(shape);
    let (s, d) = (k.stride, k.dilation);
    for ci in 0..c_in {
        for ky in 0..kh {
            let off_y = (ky * d) as isize - k.padding.0 as isize;
            let (oy0, oy1) = valid_range(off_y, s, h, ho);
            for kx in 0..kw {
                let off_x = (kx * d) as isize - k.padding.1 as isize;
                let (ox0, ox1) = valid_range(off_x, s, w, wo);
                if ox0 == ox1 {
                    continue;
                }
                let row = (ci * kh + ky) * kw + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for b in 0..n {
                    let plane = out.plane_mut(b, ci);
                    for oy in oy0..oy1 {
                        let iy = ((oy * s) as isize + off_y) as usize;
                        let dst = &mut plane[iy * w..(iy + 1) * w];
                        let base = (b * ho + oy) * wo;
                        for ox in ox0..ox1 {
                            let ix = ((ox * s) as isize + off_x) as usize;
                            dst[ix] = dst[ix] + src[base + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gathers `(n, c, hw)` data into a `c × (n·hw)` matrix.
fn to_channel_major<T: Element>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let cols = n * hw;
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            out[ch * cols + b * hw..ch * cols + (b + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

fn from_channel_major<T: Element>(m: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m.len()];
    let cols = n * hw;
    for ch in 0..c {
        for b in 0..n {
            let src = &m[ch * cols + b * hw..ch * cols + (b + 1) * hw];
            out[(b * c + ch) * hw..(b * c + ch + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

/// 2D cross-correlation with stride, zero padding and dilation (im2col + GEMM).
pub fn conv2d<T: Element>(input: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>> {
    let (ho, wo) = kernel.check_input(input)?;
    let n = input.batch();
    let c_out = kernel.out_channels();
    let kdim = kernel.weight.len() / c_out;
    let hw = ho * wo;
    let cols = n * hw;

    let col_storage;
    let col: &[T] = if kernel.is_pointwise() && n == 1 {
        input.data()
    } else if kernel.is_pointwise() {
        col_storage = to_channel_major(input.data(), n, kernel.in_channels(), hw);
        &col_storage
    } else {
        col_storage = im2col(input, kernel, (ho, wo));
        &col_storage
    };

    let mut out = vec![T::zero(); c_out * cols];
    T::gemm(
        c_out,
        kdim,
        cols,
        T::one(),
        (kernel.weight.data(), kdim as isize, 1),
        (col, cols as isize, 1),
        T::zero(),
        (&mut out, cols as isize, 1),
    );
    if n > 1 {
        out = from_channel_major(&out, n, c_out, hw);
    }
    let mut out = Tensor::from_vec([n, c_out, ho, wo], out)?;
    if let Some(bias) = &kernel.bias {
        for b in 0..n {
            for (co, &bv) in bias.data().iter().enumerate() {
                out.plane_mut(b, co).iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    Ok(out)
}

/// Forward pass that also returns the context needed for the backward pass.
pub fn conv2d_with_context<T: Element>(
    input: &Tensor<T>,
    kernel: &ConvKernel<T>,
) -> Result<(Tensor<T>, ConvContext<T>)> {
    let out = conv2d(input, kernel)?;
    let ctx = ConvContext {
        input: input.clone(),
        out_hw: (out.height(), out.width()),
    };
    Ok((out, ctx))
}

/// Input, weight and bias gradients of [`conv2d`] for an upstream gradient.
pub fn conv2d_backward<T: Element>(
    ctx: Option<&ConvContext<T>>,
    kernel: &ConvKernel<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let ctx = ctx.ok_or_else(|| Error::State("conv2d backward without a saved forward context".into()))?;
    let input = &ctx.input;
    let (ho, wo) = ctx.out_hw;
    let n = input.batch();
    let c_out = kernel.out_channels();
    let expected = [n, c_out, ho, wo];
    if upstream.shape() != expected {
        return Err(Error::dim(
            "channels",
            format!(
                "upstream gradient {:?} does not match forward output {expected:?}",
                upstream.shape()
            ),
        ));
    }
    let kdim = kernel.weight.len() / c_out;
    let hw = ho * wo;
    let cols = n * hw;

    let dy_storage;
    let dy: &[T] = if n == 1 {
        upstream.data()
    } else {
        dy_storage = to_channel_major(upstream.data(), n, c_out, hw);
        &dy_storage
    };

    let pointwise = kernel.is_pointwise();
    let col_storage;
    let col: &[T] = if pointwise && n == 1 {
        input.data()
    } else if pointwise {
        col_storage = to_channel_major(input.data(), n, kernel.in_channels(), hw);
        &col_storage
    } else {
        col_storage = im2col(input, kernel, (ho, wo));
        &col_storage
    };

    let mut dw = vec![T::zero(); kernel.weight.len()];
    T::gemm(
        c_out,
        cols,
        kdim,
        T::one(),
        (dy, cols as isize, 1),
        (col, 1, cols as isize),
        T::zero(),
        (&mut dw, kdim as isize, 1),
    );
    let weight = Tensor::from_vec(kernel.weight.shape(), dw)?;

    let bias = kernel.bias.as_ref().map(|_| {
        let sums = (0..c_out)
            .map(|co| {
                dy[co * cols..(co + 1) * cols]
                    .iter()
                    .fold(T::zero(), |a, &v| a + v)
            })
            .collect();
        Tensor::from_vec([1, c_out, 1, 1], sums).expect("bias gradient shape")
    });

    let mut dcol = vec![T::zero(); kdim * cols];
    T::gemm(
        kdim,
        c_out,
        cols,
        T::one(),
        (kernel.weight.data(), 1, kdim as isize),
        (dy, cols as isize, 1),
        T::zero(),
        (&mut dcol, cols as isize, 1),
    );
    let input_grad = if pointwise {
        let data = if n == 1 {
            dcol
        } else {
            from_channel_major(&dcol, n, kernel.in_channels(), hw)
        };
        Tensor::from_vec(input.shape(), data)?
    } else {
        col2im(&dcol, input.shape(), kernel, (ho, wo))
    };

    Ok(ConvGrads {
        input: input_grad,
        weight,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(w: Tensor<f64>, pad: (usize, usize)) -> ConvKernel<f64> {
        ConvKernel::new(w, None, 1, pad, 1).unwrap()
    }

    #[test]
    fn sum_of_ones() {
        let x = Tensor::full([1, 1, 3, 3], 1.0);
        let k = kernel(Tensor::full([1, 1, 3, 3], 1.0), (0, 0));
        let y = conv2d(&x, &k).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn discrete_difference() {
        let x = Tensor::from_vec([1, 1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let k = kernel(Tensor::from_vec([1, 1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap(), (0, 0));
        assert_eq!(conv2d(&x, &k).unwrap().data(), &[-2.0, -2.0, -2.0]);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = Tensor::<f64>::zeros([1, 2, 4, 4]);
        let k = kernel(Tensor::zeros([1, 3, 3, 3]), (1, 1));
        assert!(matches!(
            conv2d(&x, &k),
            Err(Error::Dimension { axis: "channels", .. })
        ));
    }

    #[test]
    fn oversized_kernel_is_config_error() {
        let x = Tensor::<f64>::zeros([1, 1, 2, 2]);
        let k = kernel(Tensor::zeros([1, 1, 3, 3]), (0, 0));
        assert!(matches!(conv2d(&x, &k), Err(Error::Config(_))));
        assert!(matches!(
            ConvKernel::<f64>::zeros(1, 1, (3, 3), false, 0, (0, 0), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn backward_requires_context() {
        let k = kernel(Tensor::zeros([1, 1, 1, 1]), (0, 0));
        let g = Tensor::zeros([1, 1, 2, 2]);
        assert!(matches!(
            conv2d_backward(None, &k, &g),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn identity_kernel_passes_gradient_through() {
        let x = Tensor::from_fn([2, 1, 3, 3], |[n, _, y, x]| (n + y * 3 + x) as f64);
        let k = kernel(Tensor::full([1, 1, 1, 1], 1.0), (0, 0));
        let (y, ctx) = conv2d_with_context(&x, &k).unwrap();
        assert_eq!(y, x);
        let g = conv2d_backward(Some(&ctx), &k, &Tensor::full([2, 1, 3, 3], 1.0)).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let (w, x, up) = (1.5, -2.0, 3.0);
        let k = ConvKernel::new(
            Tensor::full([1, 1, 1, 1], w),
            Some(Tensor::zeros([1, 1, 1, 1])),
            1,
            (0, 0),
            1,
        )
        .unwrap();
        let (_, ctx) = conv2d_with_context(&Tensor::full([1, 1, 1, 1], x), &k).unwrap();
        let g = conv2d_backward(Some(&ctx), &k, &Tensor::full([1, 1, 1, 1], up)).unwrap();
        assert_eq!(g.weight.data(), &[x * up]);
        assert_eq!(g.input.data(), &[w * up]);
        assert_eq!(g.bias.unwrap().data(), &[up]);
    }

    #[test]
    fn valid_range_edges() {
        assert_eq!(valid_range(-1, 1, 4, 4), (1, 4));
        assert_eq!(valid_range(1, 1, 4, 4), (0, 3));
        assert_eq!(valid_range(-1, 2, 4, 2), (1, 2));
        assert_eq!(valid_range(-20, 1, 4, 4), (0, 0));
        assert_eq!(valid_range(20, 1, 4, 4), (0, 0));
    }
}
