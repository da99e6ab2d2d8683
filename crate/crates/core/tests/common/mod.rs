//! Independent reference implementations used as test oracles. None of these
//! call into the library's numeric kernels.
#![allow(dead_code)]

use hlb::loss::BinaryMask;
use hlb::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: [usize; 4]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.random_bool(p))
}

/// Random blob-ish mask: union of a few axis-aligned rectangles and discs.
pub fn random_shape_mask(rng: &mut impl Rng, h: usize, w: usize) -> BinaryMask {
    let shapes: Vec<(bool, f64, f64, f64, f64)> = (0..rng.random_range(1..4))
        .map(|_| {
            (
                rng.random_bool(0.5),
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(1.0..(h as f64 / 2.0).max(1.5)),
                rng.random_range(1.0..(w as f64 / 2.0).max(1.5)),
            )
        })
        .collect();
    BinaryMask::from_fn(h, w, |y, x| {
        let (y, x) = (y as f64, x as f64);
        shapes.iter().any(|&(disc, cy, cx, ry, rx)| {
            if disc {
                ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0
            } else {
                (y - cy).abs() <= ry && (x - cx).abs() <= rx
            }
        })
    })
}

/// Direct seven-loop cross-correlation with zero padding.
pub fn naive_conv2d(
    input: &Tensor<f64>,
    weight: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    stride: usize,
    (ph, pw): (usize, usize),
    dilation: usize,
) -> Tensor<f64> {
    let [n, cin, h, w] = input.shape();
    let [cout, _, kh, kw] = weight.shape();
    let ho = (h + 2 * ph - dilation * (kh - 1) - 1) / stride + 1;
    let wo = (w + 2 * pw - dilation * (kw - 1) - 1) / stride + 1;
    let mut out = Tensor::zeros([n, cout, ho, wo]);
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |bs| bs.data()[co]);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky * dilation) as isize - ph as isize;
                                let ix = (ox * stride + kx * dilation) as isize - pw as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += weight.at(co, ci, ky, kx) * input.at(b, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.set(b, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Max over each non-overlapping 2x2 window.
pub fn window_max(input: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = input.shape();
    Tensor::from_fn([n, c, h / 2, w / 2], |[b, ch, y, x]| {
        let mut m = f64::NEG_INFINITY;
        for dy in 0..2 {
            for dx in 0..2 {
                m = m.max(input.at(b, ch, 2 * y + dy, 2 * x + dx));
            }
        }
        m
    })
}

/// Pixels with a differently labelled 4-neighbour.
pub fn brute_force_boundary(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = mask.dims();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = mask.get(y, x);
            let differs = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().any(|&(dy, dx)| {
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w && mask.get(ny as usize, nx as usize) != v
            });
            if differs {
                out.push((y, x));
            }
        }
    }
    out
}

/// Euclidean distance from every pixel to its nearest boundary pixel, by exhaustive search.
/// Returns `None` when the mask has no boundary.
pub fn brute_force_distance(mask: &BinaryMask) -> Option<Vec<f64>> {
    let boundary = brute_force_boundary(mask);
    if boundary.is_empty() {
        return None;
    }
    let (h, w) = mask.dims();
    let mut d = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let best = boundary
                .iter()
                .map(|&(by, bx)| {
                    let (dy, dx) = (by as f64 - y as f64, bx as f64 - x as f64);
                    dy * dy + dx * dx
                })
                .fold(f64::INFINITY, f64::min);
            d.push(best.sqrt());
        }
    }
    Some(d)
}

/// Reference weights `1 + (1 - d/d_max)`, with the degenerate cases resolved as 1 + g
/// where g = 1 when `d_max` is 0 and w = 1 when there is no boundary at all.
pub fn brute_force_inverted_weights(mask: &BinaryMask) -> Vec<f64> {
    let (h, w) = mask.dims();
    match brute_force_distance(mask) {
        None => vec![1.0; h * w],
        Some(d) => {
            let dmax = d.iter().cloned().fold(0.0, f64::max);
            d.iter()
                .map(|&v| 1.0 + if dmax == 0.0 { 1.0 } else { 1.0 - v / dmax })
                .collect()
        }
    }
}

/// Scalar weighted cross-entropy: loss and gradient by explicit per-pixel loops.
pub fn scalar_ce(logits: &Tensor<f64>, labels: &[BinaryMask], weights: &[Vec<f64>]) -> (f64, Tensor<f64>) {
    let [n, c, h, w] = logits.shape();
    let m = (n * h * w) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.shape());
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let label = labels[b].get(y, x) as usize;
                let wt = weights[b][y * w + x];
                let mx = (0..c).map(|k| logits.at(b, k, y, x)).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..c).map(|k| (logits.at(b, k, y, x) - mx).exp()).sum();
                let log_p = logits.at(b, label, y, x) - mx - z.ln();
                loss -= wt * log_p;
                for k in 0..c {
                    let p = (logits.at(b, k, y, x) - mx).exp() / z;
                    let onehot = if k == label { 1.0 } else { 0.0 };
                    grad.set(b, k, y, x, wt * (p - onehot) / m);
                }
            }
        }
    }
    (loss / m, grad)
}

/// Confusion counting written out longhand for two classes; returns mIoU in percent.
pub fn hand_miou(pred: &[BinaryMask], gt: &[BinaryMask]) -> f64 {
    let (mut tp1, mut fp1, mut fn1, mut tp0, mut fp0, mut fn0) = (0u64, 0u64, 0u64, 0u64, 0u64, 0u64);
    for (p, g) in pred.iter().zip(gt) {
        for (&a, &b) in p.data().iter().zip(g.data()) {
            match (a, b) {
                (1, 1) => tp1 += 1,
                (0, 0) => tp0 += 1,
                (1, 0) => {
                    fp1 += 1;
                    fn0 += 1
                }
                _ => {
                    fn1 += 1;
                    fp0 += 1
                }
            }
        }
    }
    let iou = |tp: u64, fp: u64, fn_: u64| {
        if tp + fp + fn_ == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp + fn_) as f64
        }
    };
    100.0 * (iou(tp0, fp0, fn0) + iou(tp1, fp1, fn1)) / 2.0
}

/// Textbook Adam on a single scalar with coupled L2.
pub struct ScalarAdam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub wd: f64,
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    pub fn new(lr: f64, wd: f64) -> Self {
        ScalarAdam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            wd,
            m: 0.0,
            v: 0.0,
            t: 0,
        }
    }

    pub fn step(&mut self, theta: f64, grad: f64) -> f64 {
        self.t += 1;
        let g = grad + self.wd * theta;
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g;
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g;
        let mh = self.m / (1.0 - self.beta1.powi(self.t));
        let vh = self.v / (1.0 - self.beta2.powi(self.t));
        theta - self.lr * mh / (vh.sqrt() + self.eps)
    }
}

/// `Σ out ⊙ r`, the scalar objective used for gradient checks.
pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central finite-difference gradient of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &Tensor<f64>, eps: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let up = f(&probe);
            probe.data_mut()[i] = orig - eps;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest violation of `|a - n| <= rtol * max(|a|, |n|)` over entries whose
/// absolute error also exceeds `atol`; 0 when everything passes.
pub fn worst_rel_error(analytic: &[f64], numeric: &[f64], atol: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let diff = (a - n).abs();
            if diff <= atol {
                0.0
            } else {
                diff / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}

pub const GRAD_RTOL: f64 = 1e-4;
pub const GRAD_ATOL: f64 = 1e-7;
pub const FD_EPS: f64 = 1e-5;

pub mod checks {
    //! Finite-difference gradient checks of the library's backward passes.
    //! Each returns the worst relative error found (0 = all within tolerance floor).

    use super::*;
    use hlb::loss::{weighted_ce_loss, BoundaryWeightMap};
    use hlb::tensor::{
        batchnorm_backward, batchnorm_train, bilinear_upsample, bilinear_upsample_backward, conv2d,
        conv2d_backward, conv2d_with_context, maxpool2x2, maxpool2x2_backward, relu, relu_backward,
        BatchNormState, ConvKernel,
    };

    pub fn conv(seed: u64, cin: usize, cout: usize, khw: (usize, usize), stride: usize, pad: (usize, usize), dil: usize, hw: (usize, usize)) -> f64 {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, [2, cin, hw.0, hw.1]);
        let w = random_tensor(&mut r, [cout, cin, khw.0, khw.1]);
        let b = random_tensor(&mut r, [1, cout, 1, 1]);
        let k = ConvKernel::new(w.clone(), Some(b.clone()), stride, pad, dil).unwrap();
        let (y, ctx) = conv2d_with_context(&x, &k).unwrap();
        let up = random_tensor(&mut r, y.shape());
        let g = conv2d_backward(Some(&ctx), &k, &up).unwrap();

        let nx = numeric_grad(&x, FD_EPS, |xp| dot(&conv2d(xp, &k).unwrap(), &up));
        let nw = numeric_grad(&w, FD_EPS, |wp| {
            let kp = ConvKernel::new(wp.clone(), Some(b.clone()), stride, pad, dil).unwrap();
            dot(&conv2d(&x, &kp).unwrap(), &up)
        });
        let nb = numeric_grad(&b, FD_EPS, |bp| {
            let kp = ConvKernel::new(w.clone(), Some(bp.clone()), stride, pad, dil).unwrap();
            dot(&conv2d(&x, &kp).unwrap(), &up)
        });
        worst_rel_error(g.input.data(), &nx, GRAD_ATOL)
            .max(worst_rel_error(g.weight.data(), &nw, GRAD_ATOL))
            .max(worst_rel_error(g.bias.as_ref().unwrap().data(), &nb, GRAD_ATOL))
    }

    pub fn batchnorm(seed: u64) -> f64 {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, [3, 4, 5, 6]);
        let mut state = BatchNormState::new(4);
        state.gamma = Tensor::from_fn([1, 4, 1, 1], |_| r.random_range(0.5..1.5));
        state.beta = random_tensor(&mut r, [1, 4, 1, 1]);
        let (y, ctx) = batchnorm_train(&x, &mut state.clone()).unwrap();
        let up = random_tensor(&mut r, y.shape());
        let g = batchnorm_backward(Some(&ctx), &state, &up).unwrap();
        let eval = |st: &BatchNormState<f64>, xp: &Tensor<f64>| dot(&batchnorm_train(xp, &mut st.clone()).unwrap().0, &up);
        let nx = numeric_grad(&x, FD_EPS, |xp| eval(&state, xp));
        let ng = numeric_grad(&state.gamma, FD_EPS, |gp| {
            let mut st = state.clone();
            st.gamma = gp.clone();
            eval(&st, &x)
        });
        let nb = numeric_grad(&state.beta, FD_EPS, |bp| {
            let mut st = state.clone();
            st.beta = bp.clone();
            eval(&st, &x)
        });
        worst_rel_error(g.input.data(), &nx, GRAD_ATOL)
            .max(worst_rel_error(g.gamma.data(), &ng, GRAD_ATOL))
            .max(worst_rel_error(g.beta.data(), &nb, GRAD_ATOL))
    }

    pub fn upsample(seed: u64, factor: usize) -> f64 {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, [2, 2, 3, 4]);
        let y = bilinear_upsample(&x, factor).unwrap();
        let up = random_tensor(&mut r, y.shape());
        let g = bilinear_upsample_backward(&up, (3, 4), factor).unwrap();
        let nx = numeric_grad(&x, FD_EPS, |xp| dot(&bilinear_upsample(xp, factor).unwrap(), &up));
        worst_rel_error(g.data(), &nx, GRAD_ATOL)
    }

    pub fn maxpool(seed: u64) -> f64 {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, [2, 3, 6, 4]);
        let (y, idx) = maxpool2x2(&x).unwrap();
        let up = random_tensor(&mut r, y.shape());
        let g = maxpool2x2_backward(&idx, &up).unwrap();
        let nx = numeric_grad(&x, FD_EPS, |xp| dot(&maxpool2x2(xp).unwrap().0, &up));
        worst_rel_error(g.data(), &nx, GRAD_ATOL)
    }

    pub fn relu_check(seed: u64) -> f64 {
        let mut r = rng(seed);
        // keep values away from the kink so central differences are valid
        let x = Tensor::from_fn([2, 2, 4, 4], |_| {
            let v: f64 = r.random_range(0.01..1.0);
            if r.random_bool(0.5) { v } else { -v }
        });
        let y = relu(&x);
        let up = random_tensor(&mut r, y.shape());
        let g = relu_backward(&y, &up).unwrap();
        let nx = numeric_grad(&x, FD_EPS, |xp| dot(&relu(xp), &up));
        worst_rel_error(g.data(), &nx, GRAD_ATOL)
    }

    pub fn weighted_ce(seed: u64, classes: usize) -> f64 {
        let mut r = rng(seed);
        let (n, h, w) = (2, 4, 5);
        let logits = Tensor::from_fn([n, classes, h, w], |_| r.random_range(-3.0..3.0));
        let labels: Vec<BinaryMask> = (0..n).map(|_| random_mask(&mut r, h, w, 0.5)).collect();
        let weights: Vec<BoundaryWeightMap> = (0..n)
            .map(|_| BoundaryWeightMap::from_weights(h, w, (0..h * w).map(|_| r.random_range(1.0..2.0)).collect()))
            .collect();
        let out = weighted_ce_loss(&logits, &labels, &weights).unwrap();
        let nx = numeric_grad(&logits, FD_EPS, |lp| weighted_ce_loss(lp, &labels, &weights).unwrap().loss);
        worst_rel_error(out.grad.data(), &nx, GRAD_ATOL)
    }
}

/// Applies a random rank-1 3x3 kernel once directly and once as a 1x3 followed
/// by a 3x1 convolution (both dilated by `d`); returns the largest difference.
pub fn factorization_gap(seed: u64, d: usize) -> f64 {
    use hlb::tensor::{conv2d, ConvKernel};
    let mut r = rng(seed);
    let (cin, cout) = (r.random_range(1..4), r.random_range(1..4));
    let (h, w) = (r.random_range(3..9), r.random_range(3..9));
    let x = random_tensor(&mut r, [2, cin, h, w]);
    let row = random_tensor(&mut r, [1, cin, 1, 3]);
    let col = random_tensor(&mut r, [cout, 1, 3, 1]);
    let full = Tensor::from_fn([cout, cin, 3, 3], |[co, ci, ky, kx]| col.at(co, 0, ky, 0) * row.at(0, ci, 0, kx));
    let direct = conv2d(&x, &ConvKernel::new(full, None, 1, (d, d), d).unwrap()).unwrap();
    let t = conv2d(&x, &ConvKernel::new(row, None, 1, (0, d), d).unwrap()).unwrap();
    let chained = conv2d(&t, &ConvKernel::new(col, None, 1, (d, 0), d).unwrap()).unwrap();
    direct.max_abs_diff(&chained)
}

/// A narrow network for checks that need many forwards.
pub fn tiny_spec(dilations: Vec<usize>) -> hlb::model::ModelSpec {
    hlb::model::ModelSpec {
        channels: [4, 8, 16],
        decrease_rate: 2,
        dilations,
        num_classes: 2,
        batchnorm: true,
    }
}

/// Random valid spec for analyzer/model agreement.
pub fn random_spec(r: &mut impl Rng) -> hlb::model::ModelSpec {
    let dr = if r.random_bool(0.5) { 2 } else { 4 };
    let c0 = 4 * r.random_range(1..5);
    let c1 = c0 + 4 * r.random_range(1..6);
    let c2 = c1 + 4 * r.random_range(1..6);
    hlb::model::ModelSpec {
        channels: [c0, c1, c2],
        decrease_rate: dr,
        dilations: (0..8).map(|_| r.random_range(1..18)).collect(),
        num_classes: r.random_range(2..5),
        batchnorm: r.random_bool(0.7),
    }
}
