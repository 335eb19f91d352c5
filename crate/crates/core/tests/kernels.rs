//! The fused convolution, batch-norm and upsampling kernels against
//! candle's composite implementations, forward and backward.

mod common;

use candle_core::{DType, Device, Tensor, Var};
use common::{grad_check, rng, scalar, t64, uniform};
use lungseg::nn::{
    bilinear_upsample2x, bilinear_upsample2x_reference, BatchNorm2d, Conv2d, Mode, ParamStore,
};
use proptest::prelude::*;

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.dims(), b.dims());
    scalar(&(a - b).unwrap().abs().unwrap().max_all().unwrap())
}

fn random(seed: u64, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    t64(&uniform(&mut rng(seed), n, -1.0, 1.0), shape)
}

/// `sum(f(x) * r)` and its gradients with respect to `x` and `extra`.
fn weighted_grads(
    f: impl Fn(&Tensor) -> Tensor,
    x: &Var,
    extra: &[&Var],
    seed: u64,
) -> (Tensor, Vec<Tensor>) {
    let y = f(x.as_tensor());
    let r = random(seed, y.dims());
    let grads = (&y * &r).unwrap().sum_all().unwrap().backward().unwrap();
    let mut out = vec![grads.get(x.as_tensor()).unwrap().clone()];
    for v in extra {
        out.push(grads.get(v.as_tensor()).unwrap().clone());
    }
    (y, out)
}

fn check_conv(b: usize, c: usize, o: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize, bias: bool) {
    let mut store = ParamStore::new(DType::F64, 7);
    let conv = Conv2d::new(store.root().pp("c"), c, o, k, stride, pad, bias).unwrap();
    let x = Var::from_tensor(&random(11, &[b, c, h, w])).unwrap();
    let mut extra = vec![conv.weight()];
    if let Some(bv) = conv.bias() {
        extra.push(bv);
    }
    let label = format!("b{b} c{c} o{o} {h}x{w} k{k} s{stride} p{pad}");
    let (y1, g1) = weighted_grads(|t| conv.forward(t).unwrap(), &x, &extra, 3);
    let y2 = conv.forward_reference(x.as_tensor()).unwrap();
    assert!(max_abs_diff(&y1, &y2) < 1e-12, "{label} forward");
    // candle's own backward mis-sizes the input gradient when the stride
    // leaves a remainder; fall back to finite differences there
    let exact = (h + 2 * pad - k) % stride == 0 && (w + 2 * pad - k) % stride == 0;
    if exact {
        let (_, g2) = weighted_grads(|t| conv.forward_reference(t).unwrap(), &x, &extra, 3);
        for (a, r) in g1.iter().zip(&g2) {
            assert!(max_abs_diff(a, r) < 1e-11, "{label} gradient");
        }
    } else {
        let r = random(3, y1.dims());
        let xs: Vec<f64> = x.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let err = grad_check(
            |t| (conv.forward(t).unwrap() * &r).unwrap().sum_all().unwrap(),
            &xs,
            &[b, c, h, w],
            1e-5,
        );
        assert!(err < 1e-6, "{label} gradient, relative error {err}");
    }
}

#[test]
fn conv_matches_reference_across_geometries() {
    for &(b, c, o, h, w, k, s, p) in &[
        (2, 3, 4, 8, 8, 3, 1, 1),
        (1, 1, 2, 5, 7, 3, 1, 1),
        (3, 2, 5, 9, 6, 3, 2, 1),
        (2, 4, 3, 8, 8, 1, 1, 0),
        (2, 4, 3, 8, 8, 1, 2, 0),
        (1, 2, 2, 1, 1, 3, 1, 1),
        (1, 2, 2, 2, 3, 3, 2, 1),
        (2, 2, 2, 6, 6, 3, 1, 0),
        (1, 3, 2, 7, 7, 5, 2, 2),
    ] {
        check_conv(b, c, o, h, w, k, s, p, false);
        check_conv(b, c, o, h, w, k, s, p, true);
    }
}

#[test]
fn conv_gradient_matches_finite_differences() {
    let mut store = ParamStore::new(DType::F64, 1);
    let conv = Conv2d::new(store.root().pp("c"), 2, 3, 3, 2, 1, true).unwrap();
    let r = random(5, &[2, 3, 3, 3]);
    let x = uniform(&mut rng(2), 2 * 2 * 5 * 5, -1.0, 1.0);
    let err = grad_check(
        |t| (conv.forward(t).unwrap() * &r).unwrap().sum_all().unwrap(),
        &x,
        &[2, 2, 5, 5],
        1e-4,
    );
    assert!(err < 1e-7, "relative error {err}");
}

#[test]
fn batch_norm_matches_reference() {
    for &(b, c, h, w) in &[(4, 3, 5, 5), (1, 2, 3, 4), (2, 1, 1, 1), (3, 4, 8, 2)] {
        let mut fused_store = ParamStore::new(DType::F64, 0);
        let fused = BatchNorm2d::new(fused_store.root().pp("bn"), c).unwrap();
        let mut ref_store = ParamStore::new(DType::F64, 0);
        let reference = BatchNorm2d::new(ref_store.root().pp("bn"), c).unwrap();
        // non-trivial affine parameters
        for store in [&fused_store, &ref_store] {
            store.param("bn.weight").unwrap().set(&random(21, &[c])).unwrap();
            store.param("bn.bias").unwrap().set(&random(22, &[c])).unwrap();
        }
        let gamma_f = fused_store.param("bn.weight").unwrap();
        let beta_f = fused_store.param("bn.bias").unwrap();
        let gamma_r = ref_store.param("bn.weight").unwrap();
        let beta_r = ref_store.param("bn.bias").unwrap();
        let x = Var::from_tensor(&(random(9, &[b, c, h, w]) * 3.0).unwrap()).unwrap();
        for mode in [Mode::Train, Mode::TrainFrozen, Mode::Eval] {
            let (y1, g1) = weighted_grads(|t| fused.forward(t, mode).unwrap(), &x, &[gamma_f, beta_f], 4);
            let (y2, g2) =
                weighted_grads(|t| reference.forward_reference(t, mode).unwrap(), &x, &[gamma_r, beta_r], 4);
            assert!(max_abs_diff(&y1, &y2) < 1e-10, "{mode:?} {b}x{c}x{h}x{w} forward");
            for (a, r) in g1.iter().zip(&g2) {
                assert!(max_abs_diff(a, r) < 1e-9, "{mode:?} {b}x{c}x{h}x{w} gradient");
            }
        }
        let stats = |s: &ParamStore| {
            let mut v: Vec<(String, Vec<f64>)> = s
                .buffers()
                .map(|(n, t)| (n.to_string(), t.as_tensor().to_vec1().unwrap()))
                .collect();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            v
        };
        for ((n1, a), (_, r)) in stats(&fused_store).iter().zip(&stats(&ref_store)) {
            for (p, q) in a.iter().zip(r) {
                assert!((p - q).abs() < 1e-12, "running statistic {n1}");
            }
        }
    }
}

#[test]
fn batch_norm_gradient_matches_finite_differences() {
    let mut store = ParamStore::new(DType::F64, 0);
    let bn = BatchNorm2d::new(store.root().pp("bn"), 2).unwrap();
    store.param("bn.weight").unwrap().set(&t64(&[1.5, -0.7], &[2])).unwrap();
    let r = random(8, &[3, 2, 2, 3]);
    let x = uniform(&mut rng(3), 36, -2.0, 2.0);
    let err = grad_check(
        |t| (bn.forward(t, Mode::TrainFrozen).unwrap() * &r).unwrap().sum_all().unwrap(),
        &x,
        &[3, 2, 2, 3],
        1e-4,
    );
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn upsample_matches_reference() {
    for &(b, c, h, w) in &[(2, 3, 4, 4), (1, 1, 1, 1), (1, 2, 3, 5), (2, 1, 8, 2)] {
        let x = Var::from_tensor(&random(1, &[b, c, h, w])).unwrap();
        let (y1, g1) = weighted_grads(|t| bilinear_upsample2x(t).unwrap(), &x, &[], 2);
        let (y2, g2) = weighted_grads(|t| bilinear_upsample2x_reference(t).unwrap(), &x, &[], 2);
        assert_eq!(y1.dims(), &[b, c, 2 * h, 2 * w]);
        assert!(max_abs_diff(&y1, &y2) < 1e-12);
        assert!(max_abs_diff(&g1[0], &g2[0]) < 1e-12);
    }
}

#[test]
fn upsample_preserves_constants_and_f32() {
    let x = Tensor::full(0.25f32, (1, 2, 3, 3), &Device::Cpu).unwrap();
    let y = bilinear_upsample2x(&x).unwrap();
    let v: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
    assert!(v.iter().all(|&p| (p - 0.25).abs() < 1e-7));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_matches_reference_random_geometry(
        b in 1usize..3, c in 1usize..4, o in 1usize..4,
        h in 1usize..9, w in 1usize..9,
        k in prop::sample::select(vec![1usize, 3]),
        stride in 1usize..3,
    ) {
        let pad = k / 2;
        check_conv(b, c, o, h, w, k, stride, pad, true);
    }
}
