use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Per-channel batch-normalisation parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T = f64> {
    /// Scale, shape `(1, C, 1, 1)`.
    pub gamma: Tensor<T>,
    /// Shift, shape `(1, C, 1, 1)`.
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
    pub training: bool,
}

impl<T: Element> BatchNormState<T> {
    pub const DEFAULT_EPS: f64 = 1e-3;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    /// Unit scale, zero shift, running mean 0 / variance 1, training mode.
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::full([1, channels, 1, 1], T::one()),
            beta: Tensor::zeros([1, channels, 1, 1]),
            running_mean: Tensor::zeros([1, channels, 1, 1]),
            running_var: Tensor::full([1, channels, 1, 1], T::one()),
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
            training: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.channels()
    }

    fn check(&self, input: &Tensor<T>) -> Result<()> {
        if input.channels() != self.channels() {
            return Err(Error::dim(
                "channels",
                format!(
                    "batch norm over {} channels got input with {}",
                    self.channels(),
                    input.channels()
                ),
            ));
        }
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> BatchNormState<U> {
        BatchNormState {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            eps: self.eps,
            momentum: self.momentum,
            training: self.training,
        }
    }
}

/// Normalised activations and inverse deviations saved by the forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormContext<T = f64> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T = f64> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

fn normalize<T: Element>(
    input: &Tensor<T>,
    state: &BatchNormState<T>,
    mean: &[T],
    inv_std: &[T],
) -> (Tensor<T>, Tensor<T>) {
    let [n, c, _, _] = input.shape();
    let mut x_hat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    for b in 0..n {
        for ch in 0..c {
            let (g, s) = (state.gamma.data()[ch], state.beta.data()[ch]);
            let src = input.plane(b, ch);
            let xh = x_hat.plane_mut(b, ch);
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - mean[ch]) * inv_std[ch];
            }
            let xh = x_hat.plane(b, ch);
            for (o, &v) in out.plane_mut(b, ch).iter_mut().zip(xh) {
                *o = g * v + s;
            }
        }
    }
    (out, x_hat)
}

/// Training-mode forward: normalises with batch statistics and updates the running ones.
pub fn batchnorm_train<T: Element>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
) -> Result<(Tensor<T>, BatchNormContext<T>)> {
    state.check(input)?;
    let [n, c, h, w] = input.shape();
    let count = n * h * w;
    let cnt = T::from_f64(count as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s = input.plane(b, ch).iter().fold(s, |a, &v| a + v);
        }
        let mu = s / cnt;
        let mut sq = T::zero();
        for b in 0..n {
            sq = input
                .plane(b, ch)
                .iter()
                .fold(sq, |a, &v| a + (v - mu) * (v - mu));
        }
        mean[ch] = mu;
        var[ch] = sq / cnt;
    }
    let eps = T::from_f64(state.eps);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (out, x_hat) = normalize(input, state, &mean, &inv_std);

    let m = T::from_f64(state.momentum);
    let unbias = if count > 1 {
        cnt / T::from_f64((count - 1) as f64)
    } else {
        T::one()
    };
    for ch in 0..c {
        let rm = &mut state.running_mean.data_mut()[ch];
        *rm = (T::one() - m) * *rm + m * mean[ch];
        let rv = &mut state.running_var.data_mut()[ch];
        *rv = (T::one() - m) * *rv + m * var[ch] * unbias;
    }
    Ok((
        out,
        BatchNormContext {
            x_hat,
            inv_std,
            batch_stats: true,
        },
    ))
}

/// Eval-mode forward using the running statistics.
pub fn batchnorm_eval<T: Element>(input: &Tensor<T>, state: &BatchNormState<T>) -> Result<Tensor<T>> {
    Ok(batchnorm_eval_with_context(input, state)?.0)
}

fn batchnorm_eval_with_context<T: Element>(
    input: &Tensor<T>,
    state: &BatchNormState<T>,
) -> Result<(Tensor<T>, BatchNormContext<T>)> {
    state.check(input)?;
    let eps = T::from_f64(state.eps);
    let inv_std: Vec<T> = state
        .running_var
        .data()
        .iter()
        .map(|&v| T::one() / (v + eps).sqrt())
        .collect();
    let (out, x_hat) = normalize(input, state, state.running_mean.data(), &inv_std);
    Ok((
        out,
        BatchNormContext {
            x_hat,
            inv_std,
            batch_stats: false,
        },
    ))
}

/// Dispatches on the state's mode flag.
pub fn batchnorm<T: Element>(
    input: &Tensor<T>,
    state: &mut BatchNormState<T>,
) -> Result<(Tensor<T>, BatchNormContext<T>)> {
    if state.training {
        batchnorm_train(input, state)
    } else {
        batchnorm_eval_with_context(input, state)
    }
}

pub fn batchnorm_backward<T: Element>(
    ctx: Option<&BatchNormContext<T>>,
    state: &BatchNormState<T>,
    upstream: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let ctx = ctx.ok_or_else(|| Error::State("batch norm backward without a saved forward context".into()))?;
    if upstream.shape() != ctx.x_hat.shape() {
        return Err(Error::dim(
            "channels",
            format!(
                "upstream gradient {:?} does not match forward output {:?}",
                upstream.shape(),
                ctx.x_hat.shape()
            ),
        ));
    }
    let [n, c, h, w] = upstream.shape();
    let cnt = T::from_f64((n * h * w) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        for b in 0..n {
            for (&g, &xh) in upstream.plane(b, ch).iter().zip(ctx.x_hat.plane(b, ch)) {
                dgamma[ch] = dgamma[ch] + g * xh;
                dbeta[ch] = dbeta[ch] + g;
            }
        }
    }
    let mut dx = Tensor::zeros(upstream.shape());
    for ch in 0..c {
        let scale = state.gamma.data()[ch] * ctx.inv_std[ch];
        let (mean_dy, mean_dy_xh) = (dbeta[ch] / cnt, dgamma[ch] / cnt);
        for b in 0..n {
            let up = upstream.plane(b, ch);
            let xh = ctx.x_hat.plane(b, ch);
            let out = dx.plane_mut(b, ch);
            for i in 0..up.len() {
                out[i] = if ctx.batch_stats {
                    scale * (up[i] - mean_dy - xh[i] * mean_dy_xh)
                } else {
                    scale * up[i]
                };
            }
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: Tensor::from_vec([1, c, 1, 1], dgamma)?,
        beta: Tensor::from_vec([1, c, 1, 1], dbeta)?,
    })
}
