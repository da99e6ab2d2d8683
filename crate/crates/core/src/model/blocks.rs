use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{BatchNorm, Conv, NamedTensor, NamedTensorMut, Relu};
use super::spec::{BfbSpec, ConvSpec, DsbSpec};
use crate::error::{Error, Result};
use crate::tensor::{self, ConvKernel, Element, PoolIndices, Tensor};

/// Kernel with fan-in scaled Gaussian weights (`std = sqrt(2 / fan_in)`) and zero bias.
/// Gain applied to the He std of the last convolution in each residual branch, so
/// that every block starts close to the identity and activations do not grow
/// with depth.
pub const RESIDUAL_INIT_GAIN: f64 = 0.1;

pub(crate) fn he_kernel<T: Element, R: Rng>(rng: &mut R, spec: &ConvSpec) -> ConvKernel<T> {
    scaled_he_kernel(rng, spec, 1.0)
}

/// Zero-mean Gaussian weights with std `gain * sqrt(2 / fan_in)`; bias zero.
pub(crate) fn scaled_he_kernel<T: Element, R: Rng>(rng: &mut R, spec: &ConvSpec, gain: f64) -> ConvKernel<T> {
    let (kh, kw) = spec.kernel;
    let fan_in = spec.in_channels * kh * kw;
    let normal = Normal::new(0.0, gain * (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let mut kernel = ConvKernel::zeros(
        spec.out_channels,
        spec.in_channels,
        spec.kernel,
        spec.bias,
        spec.stride,
        spec.padding,
        spec.dilation,
    )
    .expect("validated conv geometry");
    for w in kernel.weight.data_mut() {
        *w = T::from_f64(normal.sample(rng));
    }
    kernel
}

fn check_channels<T: Element>(x: &Tensor<T>, expected: usize, what: &str) -> Result<()> {
    if x.channels() != expected {
        return Err(Error::dim(
            "channels",
            format!("{what} expects {expected} input channels, got {}", x.channels()),
        ));
    }
    Ok(())
}

/// Stride-2 3×3 convolution concatenated with a 2×2 max-pool, then BN and ReLU.
#[derive(Clone, Debug)]
pub struct Dsb<T = f64> {
    spec: DsbSpec,
    conv: Conv<T>,
    bn: Option<BatchNorm<T>>,
    relu: Relu<T>,
    pool: Option<PoolIndices>,
}

impl<T: Element> Dsb<T> {
    pub fn new<R: Rng>(spec: DsbSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let conv = Conv::new(he_kernel(
            rng,
            &ConvSpec {
                in_channels: spec.in_channels,
                out_channels: spec.conv_channels(),
                kernel: (3, 3),
                stride: 2,
                padding: (1, 1),
                dilation: 1,
                bias: true,
            },
        ));
        Ok(Dsb {
            spec,
            conv,
            bn: spec.batchnorm.then(|| BatchNorm::new(spec.out_channels)),
            relu: Relu::default(),
            pool: None,
        })
    }

    pub fn spec(&self) -> &DsbSpec {
        &self.spec
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        check_channels(x, self.spec.in_channels, "downsampler")?;
        if x.height() % 2 != 0 {
            return Err(Error::dim("height", format!("downsampler needs an even height, got {}", x.height())));
        }
        if x.width() % 2 != 0 {
            return Err(Error::dim("width", format!("downsampler needs an even width, got {}", x.width())));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let a = self.conv.forward(x)?;
        let (p, _) = tensor::maxpool2x2(x)?;
        let mut y = tensor::concat_channels(&a, &p)?;
        if let Some(bn) = &self.bn {
            y = bn.forward(&y)?;
        }
        Ok(self.relu.forward(&y))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let a = self.conv.forward_train(x)?;
        let (p, idx) = tensor::maxpool2x2(x)?;
        self.pool = Some(idx);
        let mut y = tensor::concat_channels(&a, &p)?;
        if let Some(bn) = &mut self.bn {
            y = bn.forward_train(&y)?;
        }
        Ok(self.relu.forward_train(&y))
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.relu.backward(upstream)?;
        if let Some(bn) = &mut self.bn {
            g = bn.backward(&g)?;
        }
        let (ga, gp) = tensor::split_channels(&g, self.spec.conv_channels())?;
        let idx = self
            .pool
            .take()
            .ok_or_else(|| Error::State("downsampler backward without forward".into()))?;
        let from_pool = tensor::maxpool2x2_backward(&idx, &gp)?;
        let from_conv = self.conv.backward(&ga)?;
        tensor::add(&from_conv, &from_pool)
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        self.conv.tensors(&format!("{prefix}.conv"), out);
        if let Some(bn) = &self.bn {
            bn.tensors(&format!("{prefix}.bn"), out);
        }
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, T>>) {
        self.conv.tensors_mut(&format!("{prefix}.conv"), out);
        if let Some(bn) = &mut self.bn {
            bn.tensors_mut(&format!("{prefix}.bn"), out);
        }
    }

    pub fn cast<U: Element>(&self) -> Dsb<U> {
        Dsb {
            spec: self.spec,
            conv: self.conv.cast(),
            bn: self.bn.as_ref().map(|b| b.cast()),
            relu: Relu::default(),
            pool: None,
        }
    }
}

/// One factorized pair: 1×3 then 3×1, each followed by ReLU, with BN before the second ReLU.
#[derive(Clone, Debug)]
struct FactorizedPair<T> {
    row: Conv<T>,
    row_relu: Relu<T>,
    col: Conv<T>,
    bn: Option<BatchNorm<T>>,
    col_relu: Relu<T>,
}

impl<T: Element> FactorizedPair<T> {
    fn new<R: Rng>(channels: usize, dilation: usize, batchnorm: bool, rng: &mut R) -> Self {
        let conv = |kernel, padding, bias| ConvSpec {
            in_channels: channels,
            out_channels: channels,
            kernel,
            stride: 1,
            padding,
            dilation,
            bias,
        };
        FactorizedPair {
            row: Conv::new(he_kernel(rng, &conv((1, 3), (0, dilation), true))),
            row_relu: Relu::default(),
            // a following BN absorbs the bias
            col: Conv::new(he_kernel(rng, &conv((3, 1), (dilation, 0), !batchnorm))),
            bn: batchnorm.then(|| BatchNorm::new(channels)),
            col_relu: Relu::default(),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let t = self.row_relu.forward(&self.row.forward(x)?);
        let mut t = self.col.forward(&t)?;
        if let Some(bn) = &self.bn {
            t = bn.forward(&t)?;
        }
        Ok(self.col_relu.forward(&t))
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let t = self.row.forward_train(x)?;
        let t = self.row_relu.forward_train(&t);
        let mut t = self.col.forward_train(&t)?;
        if let Some(bn) = &mut self.bn {
            t = bn.forward_train(&t)?;
        }
        Ok(self.col_relu.forward_train(&t))
    }

    fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.col_relu.backward(upstream)?;
        if let Some(bn) = &mut self.bn {
            g = bn.backward(&g)?;
        }
        let g = self.col.backward(&g)?;
        let g = self.row_relu.backward(&g)?;
        self.row.backward(&g)
    }

    fn tensors<'a>(&'a self, prefix: &str, suffix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        self.row.tensors(&format!("{prefix}.conv1x3_{suffix}"), out);
        self.col.tensors(&format!("{prefix}.conv3x1_{suffix}"), out);
        if let Some(bn) = &self.bn {
            bn.tensors(&format!("{prefix}.bn_{suffix}"), out);
        }
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, suffix: &str, out: &mut Vec<NamedTensorMut<'a, T>>) {
        self.row.tensors_mut(&format!("{prefix}.conv1x3_{suffix}"), out);
        self.col.tensors_mut(&format!("{prefix}.conv3x1_{suffix}"), out);
        if let Some(bn) = &mut self.bn {
            bn.tensors_mut(&format!("{prefix}.bn_{suffix}"), out);
        }
    }

    fn cast<U: Element>(&self) -> FactorizedPair<U> {
        FactorizedPair {
            row: self.row.cast(),
            row_relu: Relu::default(),
            col: self.col.cast(),
            bn: self.bn.as_ref().map(|b| b.cast()),
            col_relu: Relu::default(),
        }
    }
}

/// Bottleneck-based factorized block:
///
/// `y = relu(x + conv_out(pair_b(pair_a(relu(conv_in(x))))))`
///
/// where `conv_in`/`conv_out` are 1×1 convolutions `c0 → c0/r → c0` and the
/// second factorized pair is dilated.
#[derive(Clone, Debug)]
pub struct Bfb<T = f64> {
    spec: BfbSpec,
    conv_in: Conv<T>,
    relu_in: Relu<T>,
    pair_a: FactorizedPair<T>,
    pair_b: FactorizedPair<T>,
    conv_out: Conv<T>,
    relu_out: Relu<T>,
}

impl<T: Element> Bfb<T> {
    pub fn new<R: Rng>(spec: BfbSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (c0, c1) = (spec.channels, spec.inner_channels());
        let pointwise = |cin, cout| ConvSpec {
            in_channels: cin,
            out_channels: cout,
            kernel: (1, 1),
            stride: 1,
            padding: (0, 0),
            dilation: 1,
            bias: true,
        };
        let conv_in = Conv::new(he_kernel(rng, &pointwise(c0, c1)));
        let pair_a = FactorizedPair::new(c1, 1, spec.batchnorm, rng);
        let pair_b = FactorizedPair::new(c1, spec.dilation, spec.batchnorm, rng);
        let conv_out = Conv::new(scaled_he_kernel(rng, &pointwise(c1, c0), RESIDUAL_INIT_GAIN));
        Ok(Bfb {
            spec,
            conv_in,
            relu_in: Relu::default(),
            pair_a,
            pair_b,
            conv_out,
            relu_out: Relu::default(),
        })
    }

    pub fn spec(&self) -> &BfbSpec {
        &self.spec
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        check_channels(x, self.spec.channels, "factorized block")?;
        let t = self.relu_in.forward(&self.conv_in.forward(x)?);
        let t = self.pair_a.forward(&t)?;
        let t = self.pair_b.forward(&t)?;
        let t = self.conv_out.forward(&t)?;
        Ok(self.relu_out.forward(&tensor::add(&t, x)?))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        check_channels(x, self.spec.channels, "factorized block")?;
        let t = self.conv_in.forward_train(x)?;
        let t = self.relu_in.forward_train(&t);
        let t = self.pair_a.forward_train(&t)?;
        let t = self.pair_b.forward_train(&t)?;
        let t = self.conv_out.forward_train(&t)?;
        Ok(self.relu_out.forward_train(&tensor::add(&t, x)?))
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let g_sum = self.relu_out.backward(upstream)?;
        let g = self.conv_out.backward(&g_sum)?;
        let g = self.pair_b.backward(&g)?;
        let g = self.pair_a.backward(&g)?;
        let g = self.relu_in.backward(&g)?;
        let g = self.conv_in.backward(&g)?;
        tensor::add(&g, &g_sum)
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<NamedTensor<'a, T>>) {
        self.conv_in.tensors(&format!("{prefix}.conv_in"), out);
        self.pair_a.tensors(prefix, "a", out);
        self.pair_b.tensors(prefix, "b", out);
        self.conv_out.tensors(&format!("{prefix}.conv_out"), out);
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a, T>>) {
        self.conv_in.tensors_mut(&format!("{prefix}.conv_in"), out);
        self.pair_a.tensors_mut(prefix, "a", out);
        self.pair_b.tensors_mut(prefix, "b", out);
        self.conv_out.tensors_mut(&format!("{prefix}.conv_out"), out);
    }

    pub fn cast<U: Element>(&self) -> Bfb<U> {
        Bfb {
            spec: self.spec,
            conv_in: self.conv_in.cast(),
            relu_in: Relu::default(),
            pair_a: self.pair_a.cast(),
            pair_b: self.pair_b.cast(),
            conv_out: self.conv_out.cast(),
            relu_out: Relu::default(),
        }
    }
}
