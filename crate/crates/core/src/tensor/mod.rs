//! Dense N×C×H×W tensors and the differentiable primitives the network is built from.
//!
//! Every forward primitive has a matching backward function that takes the
//! context recorded by the forward pass. The graph is static, so there is no
//! tape: the layer wrappers in [`crate::model::layers`] own their contexts.

mod conv;
mod gemm;
mod norm;
mod pointwise;
mod pool;
mod resize;

pub use conv::{conv2d, conv2d_backward, conv2d_with_context, ConvContext, ConvGrads, ConvKernel};
pub use gemm::Element;
pub use norm::{
    batchnorm, batchnorm_backward, batchnorm_eval, batchnorm_train, BatchNormContext,
    BatchNormGrads, BatchNormState,
};
pub use pointwise::{add, relu, relu_backward, softmax_channels};
pub use pool::{maxpool2x2, maxpool2x2_backward, PoolIndices};
pub use resize::{bilinear_upsample, bilinear_upsample_backward};

use crate::error::{Error, Result};

/// Shape of a 4D tensor: (batch, channels, height, width).
pub type Shape = [usize; 4];

/// Dense row-major N×C×H×W array with an optional gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

fn check_shape(shape: Shape) -> Result<usize> {
    const AXES: [&str; 4] = ["batch", "channels", "height", "width"];
    for (axis, &d) in AXES.iter().zip(shape.iter()) {
        if d == 0 {
            return Err(Error::dim(axis, "every dimension must be at least 1"));
        }
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::dim("batch", format!("element count of {shape:?} overflows")))
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    /// Tensor of the given shape with every element set to `value`.
    ///
    /// Panics if a dimension is zero; use [`Tensor::from_vec`] for fallible construction.
    pub fn full(shape: Shape, value: T) -> Self {
        let len = check_shape(shape).expect("invalid tensor shape");
        Tensor {
            shape,
            data: vec![value; len],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if data.len() != len {
            return Err(Error::dim(
                "batch",
                format!(
                    "shape {shape:?} needs {len} elements, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut t = Self::zeros(shape);
        let [n, c, h, w] = shape;
        let mut i = 0;
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        t.data[i] = f([b, ch, y, x]);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + y) * ws + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// Contiguous plane of one (sample, channel) pair.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Gradient slot, allocated (zeroed) on first access.
    pub fn grad_mut(&mut self) -> &mut [T] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient slot.
    pub fn accumulate_grad(&mut self, delta: &[T]) {
        assert_eq!(delta.len(), self.data.len(), "gradient length mismatch");
        for (g, &d) in self.grad_mut().iter_mut().zip(delta) {
            *g = *g + d;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// Converts to another element type, dropping the gradient slot.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
            grad: None,
        }
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::dim(
                "batch",
                format!("cannot reshape {:?} into {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    /// Samples `start..end` along the batch axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.shape[0] {
            return Err(Error::dim(
                "batch",
                format!("range {start}..{end} outside 0..{}", self.shape[0]),
            ));
        }
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        Tensor::from_vec(
            [end - start, self.shape[1], self.shape[2], self.shape[3]],
            self.data[start * per..end * per].to_vec(),
        )
    }

    /// Channels `start..end`, all samples.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        let [n, c, h, w] = self.shape;
        if start >= end || end > c {
            return Err(Error::dim(
                "channels",
                format!("range {start}..{end} outside 0..{c}"),
            ));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * (end - start) * hw);
        for b in 0..n {
            let base = b * c * hw;
            data.extend_from_slice(&self.data[base + start * hw..base + end * hw]);
        }
        Tensor::from_vec([n, end - start, h, w], data)
    }

    /// Stacks tensors along the batch axis.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("batch", "cannot stack zero tensors"))?;
        let [_, c, h, w] = first.shape;
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape[1..] != [c, h, w] {
                return Err(Error::dim(
                    "channels",
                    format!("cannot stack {:?} with {:?}", p.shape, first.shape),
                ));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec([n, c, h, w], data)
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// Concatenates `a` and `b` along the channel axis, `a` first.
pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, ca, h, w] = a.shape;
    let [nb, cb, hb, wb] = b.shape;
    if n != nb {
        return Err(Error::dim("batch", format!("{n} vs {nb}")));
    }
    if h != hb {
        return Err(Error::dim("height", format!("{h} vs {hb}")));
    }
    if w != wb {
        return Err(Error::dim("width", format!("{w} vs {wb}")));
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * (ca + cb) * hw);
    for s in 0..n {
        data.extend_from_slice(&a.data[s * ca * hw..(s + 1) * ca * hw]);
        data.extend_from_slice(&b.data[s * cb * hw..(s + 1) * cb * hw]);
    }
    Tensor::from_vec([n, ca + cb, h, w], data)
}

/// Splits a gradient of a channel concatenation back into its two parts.
pub fn split_channels<T: Element>(t: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((
        t.slice_channels(0, first)?,
        t.slice_channels(first, t.channels())?,
    ))
}
