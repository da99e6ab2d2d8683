use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{he_kernel, Bfb, Dsb};
use super::layers::{Conv, NamedTensor, NamedTensorMut, TensorRole};
use super::spec::{LayerSpec, ModelSpec, INPUT_CHANNELS, OUTPUT_STRIDE};
use crate::error::{Error, Result};
use crate::tensor::{self, Element, Tensor};

#[derive(Clone, Debug)]
enum Block<T> {
    Dsb(Dsb<T>),
    Bfb(Bfb<T>),
    Conv(Conv<T>),
    Upsample { factor: usize, input_hw: Option<(usize, usize)> },
}

/// The assembled network: DSB, DSB, 5×BFB, DSB, 8×dilated BFB, 1×1 decoder, ×8 upsample.
#[derive(Clone, Debug)]
pub struct Model<T = f64> {
    spec: ModelSpec,
    blocks: Vec<(String, Block<T>)>,
}

/// Builds the network with deterministic fan-in scaled Gaussian initialisation.
pub fn build_hlb(spec: &ModelSpec, seed: u64) -> Result<Model<f64>> {
    Model::new(spec, seed)
}

impl<T: Element> Model<T> {
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = spec
            .blocks()
            .into_iter()
            .map(|(name, layer)| {
                let block = match layer {
                    LayerSpec::Dsb(d) => Block::Dsb(Dsb::new(d, &mut rng)?),
                    LayerSpec::Bfb(b) => Block::Bfb(Bfb::new(b, &mut rng)?),
                    LayerSpec::Conv(c) => Block::Conv(Conv::new(he_kernel(&mut rng, &c))),
                    LayerSpec::Upsample { factor } => Block::Upsample { factor, input_hw: None },
                };
                Ok((name, block))
            })
            .collect::<Result<_>>()?;
        Ok(Model {
            spec: spec.clone(),
            blocks,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != INPUT_CHANNELS {
            return Err(Error::dim(
                "channels",
                format!("expected {INPUT_CHANNELS}-channel images, got {}", x.channels()),
            ));
        }
        if x.height() % OUTPUT_STRIDE != 0 {
            return Err(Error::dim(
                "height",
                format!("input height {} must be a multiple of {OUTPUT_STRIDE}", x.height()),
            ));
        }
        if x.width() % OUTPUT_STRIDE != 0 {
            return Err(Error::dim(
                "width",
                format!("input width {} must be a multiple of {OUTPUT_STRIDE}", x.width()),
            ));
        }
        Ok(())
    }

    /// Eval-mode forward (running BN statistics), returning full-resolution logits.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut t = x.clone();
        for (_, block) in &self.blocks {
            t = Self::block_forward(block, &t)?;
        }
        Ok(t)
    }

    /// Eval-mode forward that also returns every block's output, in order.
    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<Vec<(String, Tensor<T>)>> {
        self.check_input(x)?;
        let mut out: Vec<(String, Tensor<T>)> = Vec::with_capacity(self.blocks.len());
        for (name, block) in &self.blocks {
            let input = out.last().map_or(x, |(_, t)| t);
            let y = Self::block_forward(block, input)?;
            out.push((name.clone(), y));
        }
        Ok(out)
    }

    fn block_forward(block: &Block<T>, t: &Tensor<T>) -> Result<Tensor<T>> {
        match block {
            Block::Dsb(b) => b.forward(t),
            Block::Bfb(b) => b.forward(t),
            Block::Conv(c) => c.forward(t),
            Block::Upsample { factor, .. } => tensor::bilinear_upsample(t, *factor),
        }
    }

    /// Training-mode forward: batch statistics, contexts saved for [`Model::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut t = x.clone();
        for (_, block) in &mut self.blocks {
            t = match block {
                Block::Dsb(b) => b.forward_train(&t)?,
                Block::Bfb(b) => b.forward_train(&t)?,
                Block::Conv(c) => c.forward_train(&t)?,
                Block::Upsample { factor, input_hw } => {
                    *input_hw = Some((t.height(), t.width()));
                    tensor::bilinear_upsample(&t, *factor)?
                }
            };
        }
        Ok(t)
    }

    /// Backpropagates a logits gradient, accumulating parameter gradients.
    /// Returns the gradient with respect to the input image.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_logits.clone();
        for (name, block) in self.blocks.iter_mut().rev() {
            g = match block {
                Block::Dsb(b) => b.backward(&g)?,
                Block::Bfb(b) => b.backward(&g)?,
                Block::Conv(c) => c.backward(&g)?,
                Block::Upsample { factor, input_hw } => {
                    let hw = input_hw
                        .take()
                        .ok_or_else(|| Error::State(format!("{name}: backward without forward")))?;
                    tensor::bilinear_upsample_backward(&g, hw, *factor)?
                }
            };
        }
        Ok(g)
    }

    /// Every named tensor (parameters and BN running statistics) in forward order.
    pub fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = Vec::new();
        for (name, block) in &self.blocks {
            match block {
                Block::Dsb(b) => b.tensors(name, &mut out),
                Block::Bfb(b) => b.tensors(name, &mut out),
                Block::Conv(c) => c.tensors(name, &mut out),
                Block::Upsample { .. } => {}
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_, T>> {
        let mut out = Vec::new();
        for (name, block) in &mut self.blocks {
            match block {
                Block::Dsb(b) => b.tensors_mut(name, &mut out),
                Block::Bfb(b) => b.tensors_mut(name, &mut out),
                Block::Conv(c) => c.tensors_mut(name, &mut out),
                Block::Upsample { .. } => {}
            }
        }
        out
    }

    /// Trainable parameters only, in forward order.
    pub fn parameters_mut(&mut self) -> Vec<NamedTensorMut<'_, T>> {
        self.tensors_mut()
            .into_iter()
            .filter(|t| t.role == TensorRole::Parameter)
            .collect()
    }

    /// Total number of trainable scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.tensors()
            .iter()
            .filter(|t| t.role == TensorRole::Parameter)
            .map(|t| t.tensor.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.tensor.zero_grad();
        }
    }

    /// Converts every tensor to another precision (e.g. `f32` for benchmarking).
    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|(name, b)| {
                    let b = match b {
                        Block::Dsb(d) => Block::Dsb(d.cast()),
                        Block::Bfb(f) => Block::Bfb(f.cast()),
                        Block::Conv(c) => Block::Conv(c.cast()),
                        Block::Upsample { factor, .. } => Block::Upsample {
                            factor: *factor,
                            input_hw: None,
                        },
                    };
                    (name.clone(), b)
                })
                .collect(),
        }
    }
}
