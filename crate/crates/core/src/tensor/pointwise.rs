use super::{Element, Tensor};
use crate::error::{Error, Result};

pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`] given its forward output.
pub fn relu_backward<T: Element>(output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if output.shape() != upstream.shape() {
        return Err(Error::dim(
            "channels",
            format!("{:?} vs {:?}", output.shape(), upstream.shape()),
        ));
    }
    let mut g = upstream.clone();
    g.clear_grad();
    for (gv, &o) in g.data_mut().iter_mut().zip(output.data()) {
        if o <= T::zero() {
            *gv = T::zero();
        }
    }
    Ok(g)
}

/// Elementwise sum of two same-shaped tensors.
pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "channels",
            format!("cannot add {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Softmax across the channel axis, independently at every pixel.
pub fn softmax_channels<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input.shape();
    let hw = h * w;
    let mut out = Tensor::zeros(input.shape());
    let src = input.data();
    let dst = out.data_mut();
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut max = T::neg_infinity();
            for ch in 0..c {
                max = max.max(src[base + ch * hw + p]);
            }
            let mut sum = T::zero();
            for ch in 0..c {
                let e = (src[base + ch * hw + p] - max).exp();
                dst[base + ch * hw + p] = e;
                sum = sum + e;
            }
            for ch in 0..c {
                dst[base + ch * hw + p] = dst[base + ch * hw + p] / sum;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn softmax_equal_logits_is_uniform() {
        let x = Tensor::full([2, 2, 3, 3], 0.7);
        let s = softmax_channels(&x);
        assert!(s.data().iter().all(|&v| (v - 0.5f64).abs() < 1e-15));
    }

    #[test]
    fn softmax_handles_large_logits() {
        let x = Tensor::from_vec([1, 2, 1, 1], vec![1000.0, 0.0]).unwrap();
        let s = softmax_channels(&x);
        assert_eq!(s.data()[0], 1.0);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-300);
    }

    #[test]
    fn add_checks_shape() {
        let a = Tensor::<f64>::zeros([1, 2, 2, 2]);
        assert!(add(&a, &Tensor::zeros([1, 1, 2, 2])).is_err());
        assert_eq!(add(&a, &a).unwrap(), a);
    }
}
