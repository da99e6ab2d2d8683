mod common;

use common::*;
use hlb::tensor::{
    add, bilinear_upsample, concat_channels, conv2d, conv2d_backward, maxpool2x2, softmax_channels,
    split_channels, ConvKernel,
};
use hlb::{Error, Tensor};
use proptest::prelude::*;

const DILATIONS: [usize; 8] = [1, 2, 3, 4, 5, 9, 13, 17];

#[test]
fn conv_gradients_for_every_kernel_shape_in_the_network() {
    let mut worst: f64 = 0.0;
    // 3x3 stride 2 (downsampler)
    worst = worst.max(checks::conv(1, 3, 2, (3, 3), 2, (1, 1), 1, (6, 6)));
    // pointwise
    worst = worst.max(checks::conv(2, 3, 4, (1, 1), 1, (0, 0), 1, (5, 6)));
    for (i, &d) in DILATIONS.iter().enumerate() {
        let seed = 10 + i as u64;
        worst = worst.max(checks::conv(seed, 2, 3, (1, 3), 1, (0, d), d, (5, 6)));
        worst = worst.max(checks::conv(seed + 100, 2, 3, (3, 1), 1, (d, 0), d, (6, 5)));
    }
    assert!(worst <= GRAD_RTOL, "worst relative error {worst:e}");
}

#[test]
fn other_op_gradients() {
    for seed in 0..3 {
        assert!(checks::batchnorm(seed) <= GRAD_RTOL);
        assert!(checks::upsample(seed, 8) <= GRAD_RTOL);
        assert!(checks::upsample(seed, 3) <= GRAD_RTOL);
        assert!(checks::maxpool(seed) <= GRAD_RTOL);
        assert!(checks::relu_check(seed) <= GRAD_RTOL);
    }
}

#[test]
fn separable_kernels_factorize_exactly() {
    for seed in 0..50 {
        for d in [1, 2, 5] {
            let gap = factorization_gap(seed, d);
            assert!(gap <= 1e-9, "seed {seed} d {d}: {gap:e}");
        }
    }
}

#[test]
fn maxpool_matches_window_oracle() {
    let mut r = rng(4);
    for _ in 0..20 {
        let x = random_tensor(&mut r, [2, 3, 8, 6]);
        assert_eq!(maxpool2x2(&x).unwrap().0, window_max(&x));
    }
}

#[test]
fn upsample_preserves_constants_and_shape() {
    let x = Tensor::<f64>::full([1, 2, 3, 5], 0.25);
    let y = bilinear_upsample(&x, 8).unwrap();
    assert_eq!(y.shape(), [1, 2, 24, 40]);
    assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn softmax_rows_sum_to_one_and_resist_overflow() {
    let x = Tensor::<f64>::from_vec([1, 2, 1, 2], vec![1000.0, -1000.0, 999.0, 0.0]).unwrap();
    let p = softmax_channels(&x);
    for i in 0..2 {
        let s = p.plane(0, 0)[i] + p.plane(0, 1)[i];
        assert!((s - 1.0).abs() < 1e-12);
        assert!(p.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn concat_then_split_round_trips() {
    let mut r = rng(5);
    let a = random_tensor(&mut r, [2, 3, 4, 4]);
    let b = random_tensor(&mut r, [2, 5, 4, 4]);
    let c = concat_channels(&a, &b).unwrap();
    assert_eq!(c.channels(), 8);
    let (a2, b2) = split_channels(&c, 3).unwrap();
    assert_eq!((a2, b2), (a, b));
}

#[test]
fn error_kinds() {
    let x = Tensor::zeros([1, 3, 4, 4]);
    let k = ConvKernel::<f64>::zeros(2, 4, (3, 3), false, 1, (1, 1), 1).unwrap();
    assert!(matches!(conv2d(&x, &k), Err(Error::Dimension { axis: "channels", .. })));
    let big = ConvKernel::<f64>::zeros(2, 3, (3, 3), false, 1, (0, 0), 5).unwrap();
    assert!(matches!(conv2d(&x, &big), Err(Error::Config(_))));
    let k3 = ConvKernel::<f64>::zeros(2, 3, (3, 3), false, 1, (1, 1), 1).unwrap();
    assert!(matches!(conv2d_backward(None, &k3, &x), Err(Error::State(_))));
    assert!(matches!(maxpool2x2(&Tensor::<f64>::zeros([1, 1, 3, 4])), Err(Error::Dimension { .. })));
    assert!(add(&x, &Tensor::zeros([1, 3, 4, 5])).is_err());
}

fn conv_case() -> impl Strategy<Value = (u64, usize, usize, usize, usize, usize, usize, usize, usize, usize, usize)> {
    // seed, cin, cout, kh, kw, stride, ph, pw, dilation, h, w
    (any::<u64>(), 1..4usize, 1..4usize, 1..4usize, 1..4usize, 1..3usize, 0..3usize, 0..3usize, 1..3usize, 4..9usize, 4..9usize)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_direct_loops((seed, cin, cout, kh, kw, s, ph, pw, d, h, w) in conv_case()) {
        prop_assume!(h + 2 * ph > d * (kh - 1) && w + 2 * pw > d * (kw - 1));
        let mut r = rng(seed);
        let x = random_tensor(&mut r, [2, cin, h, w]);
        let wt = random_tensor(&mut r, [cout, cin, kh, kw]);
        let b = random_tensor(&mut r, [1, cout, 1, 1]);
        let got = conv2d(&x, &ConvKernel::new(wt.clone(), Some(b.clone()), s, (ph, pw), d).unwrap()).unwrap();
        let want = naive_conv2d(&x, &wt, Some(&b), s, (ph, pw), d);
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn conv_is_linear_in_its_input(seed in any::<u64>(), a in -2.0..2.0f64, c in -2.0..2.0f64) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, [1, 2, 6, 7]);
        let y = random_tensor(&mut r, [1, 2, 6, 7]);
        let k = ConvKernel::new(random_tensor(&mut r, [3, 2, 3, 3]), None, 1, (1, 1), 2).unwrap();
        let mix = Tensor::from_fn(x.shape(), |[n, ch, i, j]| a * x.at(n, ch, i, j) + c * y.at(n, ch, i, j));
        let lhs = conv2d(&mix, &k).unwrap();
        let (cx, cy) = (conv2d(&x, &k).unwrap(), conv2d(&y, &k).unwrap());
        let rhs = Tensor::from_fn(cx.shape(), |[n, ch, i, j]| a * cx.at(n, ch, i, j) + c * cy.at(n, ch, i, j));
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }
}
