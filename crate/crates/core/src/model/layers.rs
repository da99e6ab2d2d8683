//! Stateful wrappers around the tensor primitives. Each wrapper keeps the
//! context of its last training-mode forward and consumes it on backward.

use crate::error::{Error, Result};
use crate::tensor::{
    self, BatchNormContext, BatchNormState, ConvContext, ConvKernel, Element, Tensor,
};

/// Whether a named tensor is optimised or only carried along (running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorRole {
    Parameter,
    Buffer,
}

/// Named view of a model tensor.
pub struct NamedTensor<'a, T> {
    pub name: String,
    pub role: TensorRole,
    pub tensor: &'a Tensor<T>,
}

pub struct NamedTensorMut<'a, T> {
    pub name: String,
    pub role: TensorRole,
    pub tensor: &'a mut Tensor<T>,
}

fn missing(what: &str) -> Error {
    Error::State(format!("{what} backward called without a saved forward context"))
}

#[derive(Clone, Debug)]
pub struct Conv<T = f64> {
    pub kernel: ConvKernel<T>,
    ctx: Option<ConvContext<T>>,
}

impl<T: Element> Conv<T> {
    pub fn new(kernel: ConvKernel<T>) -> Self {
        Conv { kernel, ctx: None }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        tensor::conv2d(x, &self.kernel)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, ctx) = tensor::conv2d_with_context(x, &self.kernel)?;
        self.ctx = Some(ctx);
        Ok(y)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let ctx = self.ctx.take().ok_or_else(|| missing("conv"))?;
        let grads = tensor::conv2d_backward(Some(&ctx), &self.kernel, upstream)?;
        self.kernel.weight.accumulate_grad(grads.weight.data());
        if let (Some(b), Some(gb)) = (self.kernel.bias.as_mut(), grads.bias) {
            b.accumulate_grad(gb.data());
        }
        Ok(grads.input)
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        out.push(NamedTensor {
            name: format!("{prefix}.weight"),
            role: TensorRole::Parameter,
            tensor: &self.kernel.weight,
        });
        if let Some(b) = &self.kernel.bias {
            out.push(NamedTensor {
                name: format!("{prefix}.bias"),
                role: TensorRole::Parameter,
                tensor: b,
            });
        }
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, T>>) {
        out.push(NamedTensorMut {
            name: format!("{prefix}.weight"),
            role: TensorRole::Parameter,
            tensor: &mut self.kernel.weight,
        });
        if let Some(b) = &mut self.kernel.bias {
            out.push(NamedTensorMut {
                name: format!("{prefix}.bias"),
                role: TensorRole::Parameter,
                tensor: b,
            });
        }
    }

    pub fn cast<U: Element>(&self) -> Conv<U> {
        Conv::new(ConvKernel {
            weight: self.kernel.weight.cast(),
            bias: self.kernel.bias.as_ref().map(|b| b.cast()),
            stride: self.kernel.stride,
            padding: self.kernel.padding,
            dilation: self.kernel.dilation,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm<T = f64> {
    pub state: BatchNormState<T>,
    ctx: Option<BatchNormContext<T>>,
}

impl<T: Element> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            state: BatchNormState::new(channels),
            ctx: None,
        }
    }

    /// Inference: running statistics.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        tensor::batchnorm_eval(x, &self.state)
    }

    /// Training: batch statistics, running statistics updated.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.state.training = true;
        let (y, ctx) = tensor::batchnorm(x, &mut self.state)?;
        self.ctx = Some(ctx);
        Ok(y)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let ctx = self.ctx.take().ok_or_else(|| missing("batch norm"))?;
        let g = tensor::batchnorm_backward(Some(&ctx), &self.state, upstream)?;
        self.state.gamma.accumulate_grad(g.gamma.data());
        self.state.beta.accumulate_grad(g.beta.data());
        Ok(g.input)
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        let s = &self.state;
        for (suffix, role, t) in [
            ("gamma", TensorRole::Parameter, &s.gamma),
            ("beta", TensorRole::Parameter, &s.beta),
            ("running_mean", TensorRole::Buffer, &s.running_mean),
            ("running_var", TensorRole::Buffer, &s.running_var),
        ] {
            out.push(NamedTensor {
                name: format!("{prefix}.{suffix}"),
                role,
                tensor: t,
            });
        }
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, T>>) {
        let s = &mut self.state;
        for (suffix, role, t) in [
            ("gamma", TensorRole::Parameter, &mut s.gamma),
            ("beta", TensorRole::Parameter, &mut s.beta),
            ("running_mean", TensorRole::Buffer, &mut s.running_mean),
            ("running_var", TensorRole::Buffer, &mut s.running_var),
        ] {
            out.push(NamedTensorMut {
                name: format!("{prefix}.{suffix}"),
                role,
                tensor: t,
            });
        }
    }

    pub fn cast<U: Element>(&self) -> BatchNorm<U> {
        BatchNorm {
            state: self.state.cast(),
            ctx: None,
        }
    }
}

/// ReLU that remembers its output for the backward mask.
#[derive(Clone, Debug, Default)]
pub struct Relu<T = f64> {
    out: Option<Tensor<T>>,
}

impl<T: Element> Relu<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        tensor::relu(x)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = tensor::relu(x);
        self.out = Some(y.clone());
        y
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.out.take().ok_or_else(|| missing("relu"))?;
        tensor::relu_backward(&out, upstream)
    }
}
