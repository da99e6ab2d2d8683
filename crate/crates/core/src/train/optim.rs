use crate::error::{Error, Result};
use crate::model::NamedTensorMut;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty, folded into the gradient as `g + λθ`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    name: String,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam moments for an ordered list of parameters.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub config: AdamConfig,
    pub lr: f64,
    step: u64,
    moments: Vec<Moments>,
}

impl OptimState {
    pub fn new(lr: f64, config: AdamConfig) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(OptimState {
            config,
            lr,
            step: 0,
            moments: Vec::new(),
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        self.lr = lr;
        Ok(())
    }

    /// First and second moments of parameter `index`, once it has been stepped.
    pub fn moments(&self, index: usize) -> Option<(&[f64], &[f64])> {
        self.moments.get(index).map(|m| (m.m.as_slice(), m.v.as_slice()))
    }
}

/// One bias-corrected Adam update of every parameter from its accumulated gradient.
///
/// A parameter without a gradient buffer is treated as having zero gradient.
/// All gradients are checked before anything is modified, so a non-finite
/// gradient leaves parameters and moments untouched.
pub fn adam_step(params: &mut [NamedTensorMut<'_, f64>], state: &mut OptimState) -> Result<()> {
    for p in params.iter() {
        if let Some(g) = p.tensor.grad() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite gradient {} in parameter `{}` at element {i}",
                    g[i], p.name
                )));
            }
        }
    }
    if state.moments.is_empty() {
        state.moments = params
            .iter()
            .map(|p| Moments {
                name: p.name.clone(),
                m: vec![0.0; p.tensor.len()],
                v: vec![0.0; p.tensor.len()],
            })
            .collect();
    } else if state.moments.len() != params.len() {
        return Err(Error::State(format!(
            "optimizer tracks {} parameters, got {}",
            state.moments.len(),
            params.len()
        )));
    }
    for (p, mo) in params.iter().zip(&state.moments) {
        if p.name != mo.name || p.tensor.len() != mo.m.len() {
            return Err(Error::State(format!("parameter `{}` does not match optimizer slot `{}`", p.name, mo.name)));
        }
    }

    state.step += 1;
    let AdamConfig {
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let lr = state.lr;
    for (p, mo) in params.iter_mut().zip(&mut state.moments) {
        let grad = p.tensor.grad().map(|g| g.to_vec());
        let theta = p.tensor.data_mut();
        for i in 0..theta.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[i]) + weight_decay * theta[i];
            mo.m[i] = beta1 * mo.m[i] + (1.0 - beta1) * g;
            mo.v[i] = beta2 * mo.v[i] + (1.0 - beta2) * g * g;
            let m_hat = mo.m[i] / c1;
            let v_hat = mo.v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TensorRole;
    use crate::tensor::Tensor;

    fn scalar(v: f64, g: f64) -> Tensor<f64> {
        let mut t = Tensor::full([1, 1, 1, 1], v);
        t.accumulate_grad(&[g]);
        t
    }

    fn named(t: &mut Tensor<f64>) -> Vec<NamedTensorMut<'_, f64>> {
        vec![NamedTensorMut {
            name: "w".into(),
            role: TensorRole::Parameter,
            tensor: t,
        }]
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimState::new(1e-3, cfg).unwrap();
        let mut t = scalar(2.0, 3.5);
        adam_step(&mut named(&mut t), &mut st).unwrap();
        assert!((t.data()[0] - (2.0 - 1e-3)).abs() < 1e-9);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut st = OptimState::new(1e-3, cfg).unwrap();
        let mut t = scalar(2.0, 1.0);
        adam_step(&mut named(&mut t), &mut st).unwrap();
        let after_first = t.data()[0];
        let m1 = st.moments(0).unwrap().0[0];
        t.zero_grad();
        adam_step(&mut named(&mut t), &mut st).unwrap();
        let m2 = st.moments(0).unwrap().0[0];
        assert!(m2.abs() < m1.abs());
        // still moving from momentum, but a fresh zero-moment state would not
        let mut fresh = OptimState::new(1e-3, cfg).unwrap();
        let mut u = scalar(after_first, 0.0);
        adam_step(&mut named(&mut u), &mut fresh).unwrap();
        assert_eq!(u.data()[0], after_first);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut st = OptimState::new(1e-3, AdamConfig::default()).unwrap();
        let mut t = scalar(1.0, f64::NAN);
        let err = adam_step(&mut named(&mut t), &mut st).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
        assert_eq!(t.data()[0], 1.0);
        assert!(OptimState::new(0.0, AdamConfig::default()).is_err());
    }
}
