mod common;

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use common::{rng, scalar, uniform};
use lungseg::nn::{Mode, ParamStore};
use lungseg::segmentor::{make_variant, AttentionGate, Segmentor, SegmentorConfig, VARIANTS};

fn input(seed: u64, b: usize, m: usize) -> Tensor {
    let v = uniform(&mut rng(seed), b * m * m, 0.0, 1.0);
    Tensor::from_vec(v, (b, 1, m, m), &Device::Cpu)
        .unwrap()
        .to_dtype(DType::F32)
        .unwrap()
}

fn small(name: &str, m: usize) -> SegmentorConfig {
    make_variant(name).unwrap().with_size(m, 4)
}

fn range(t: &Tensor) -> (f64, f64) {
    (scalar(&t.min_all().unwrap()), scalar(&t.max_all().unwrap()))
}

#[test]
fn every_variant_has_exact_side_ladder_and_unit_range() {
    let m = 64;
    for name in VARIANTS {
        let seg = Segmentor::new(small(name, m), 1).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let out = seg.forward(&input(2, 2, m), mode).unwrap();
            assert_eq!(out.final_map.dims(), &[2, 1, m, m], "{name}");
            assert_eq!(out.sides.len(), 4, "{name}");
            for (i, side) in out.sides.iter().enumerate() {
                let r = m >> (3 - i);
                assert_eq!(side.dims(), &[2, 1, r, r], "{name} side {i}");
                let (lo, hi) = range(side);
                assert!(lo >= 0.0 && hi <= 1.0, "{name} side {i} in [{lo}, {hi}]");
            }
            let same = (&out.sides[3] - &out.final_map).unwrap().abs().unwrap();
            assert_eq!(scalar(&same.max_all().unwrap()), 0.0, "{name}: last side is final");
        }
    }
}

#[test]
fn full_scale_ladder() {
    let cfg = make_variant("PPAU-Net").unwrap().with_size(128, 2);
    let out = Segmentor::new(cfg, 0).unwrap().forward(&input(0, 1, 128), Mode::Eval).unwrap();
    let sizes: Vec<usize> = out.sides.iter().map(|s| s.dims()[3]).collect();
    assert_eq!(sizes, vec![16, 32, 64, 128]);
}

#[test]
fn variant_flags() {
    let flags = |n: &str| {
        let c = make_variant(n).unwrap();
        (c.pyramid_inputs, c.attention_gates, c.progressive_side_outputs, c.deep_supervision)
    };
    assert_eq!(flags("U-Net"), (false, false, false, false));
    assert_eq!(flags("PPAU-Net"), (true, true, true, true));
    assert_eq!(flags("AU-Net"), (false, true, false, false));
    assert_eq!(flags("PU-Net"), (true, false, false, false));
    assert_eq!(flags("ProgU-Net"), (false, false, true, true));
    assert_eq!(flags("PPU-Net"), (true, false, true, true));
    for name in VARIANTS {
        let c = make_variant(name).unwrap();
        assert_eq!((c.input_size, c.base_channels), (128, 32));
        assert_eq!(c.variant_name(), Some(name));
    }
    assert!(make_variant("V-Net").is_err());
}

#[test]
fn input_size_must_divide_by_sixteen() {
    assert!(Segmentor::new(small("U-Net", 72), 0).is_err());
    assert!(Segmentor::new(small("U-Net", 0), 0).is_err());
    let seg = Segmentor::new(small("U-Net", 32), 0).unwrap();
    assert!(seg.forward(&input(0, 1, 64), Mode::Eval).is_err());
}

/// Layer name of a parameter path: everything before the last component.
fn layer_of(path: &str) -> &str {
    path.rsplit_once('.').map_or(path, |(layer, _)| layer)
}

#[test]
fn gradient_reaches_every_layer() {
    let m = 64;
    for name in VARIANTS {
        let seg = Segmentor::new(small(name, m), 3).unwrap();
        let out = seg.forward(&input(4, 2, m), Mode::Train).unwrap();
        let mut loss = Tensor::zeros((), DType::F32, &Device::Cpu).unwrap();
        for (i, side) in out.sides.iter().enumerate() {
            let weights = input(10 + i as u64, 2, side.dims()[3]);
            loss = (loss + (side * weights).unwrap().sum_all().unwrap()).unwrap();
        }
        let grads = loss.backward().unwrap();
        let mut reached: BTreeMap<&str, bool> = BTreeMap::new();
        for (path, var) in seg.store().params() {
            let nonzero = grads.get(var.as_tensor()).is_some_and(|g| {
                scalar(&g.abs().unwrap().max_all().unwrap()) > 0.0
            });
            *reached.entry(layer_of(path)).or_default() |= nonzero;
        }
        let dead: Vec<_> = reached.iter().filter(|(_, ok)| !**ok).map(|(l, _)| *l).collect();
        assert!(dead.is_empty(), "{name}: no gradient reaches {dead:?}");
        assert!(reached.len() > 10, "{name}");
    }
}

#[test]
fn eval_forward_is_batch_equivariant() {
    let m = 32;
    for name in ["U-Net", "PPAU-Net", "AU-Net", "PPU-Net"] {
        let seg = Segmentor::new(small(name, m), 5).unwrap();
        // move the running statistics away from their initial values
        seg.forward(&input(6, 4, m), Mode::Train).unwrap();
        let batch = input(7, 3, m);
        let joint = seg.forward(&batch, Mode::Eval).unwrap();
        for i in 0..3 {
            let single = seg.forward(&batch.narrow(0, i, 1).unwrap(), Mode::Eval).unwrap();
            for (a, b) in joint.sides.iter().zip(&single.sides) {
                let d = (a.narrow(0, i, 1).unwrap() - b).unwrap().abs().unwrap();
                assert!(scalar(&d.max_all().unwrap()) < 1e-5, "{name} sample {i}");
            }
        }
    }
}

#[test]
fn parameter_counts() {
    for name in VARIANTS {
        let a = Segmentor::new(small(name, 32), 0).unwrap().num_params();
        let b = Segmentor::new(small(name, 32), 99).unwrap().num_params();
        assert_eq!(a, b, "{name}: count independent of seed");
        assert!(a > 0);
    }
    for (plain, gated) in [
        ("U-Net", "AU-Net"),
        ("PU-Net", "PAU-Net"),
        ("ProgU-Net", "ProgAU-Net"),
        ("PPU-Net", "PPAU-Net"),
    ] {
        let p = Segmentor::new(small(plain, 32), 0).unwrap().num_params();
        let g = Segmentor::new(small(gated, 32), 0).unwrap().num_params();
        assert!(g > p, "{gated} ({g}) vs {plain} ({p})");
    }
}

#[test]
fn initialisation_is_seeded() {
    let cfg = small("PPAU-Net", 32);
    let a = Segmentor::new(cfg.clone(), 1).unwrap().store().hash().unwrap();
    let b = Segmentor::new(cfg.clone(), 1).unwrap().store().hash().unwrap();
    let c = Segmentor::new(cfg, 2).unwrap().store().hash().unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn attention_gate_properties() {
    let mut store = ParamStore::new(DType::F64, 3);
    let gate = AttentionGate::new(store.root().pp("g"), 6, 12).unwrap();
    assert_eq!(gate.inner_channels(), 3);
    assert_eq!(gate.w_x().weight().dims(), &[3, 6, 1, 1]);
    assert_eq!(gate.w_g().weight().dims(), &[3, 12, 1, 1]);
    assert_eq!(gate.psi().weight().dims(), &[1, 3, 1, 1]);
    let mk = |seed, shape: &[usize], scale: f64| {
        let n = shape.iter().product();
        Tensor::from_vec(uniform(&mut rng(seed), n, -scale, scale), shape, &Device::Cpu).unwrap()
    };
    for seed in 0..5 {
        let x = mk(seed, &[2, 6, 8, 8], 5.0);
        let g = mk(seed + 100, &[2, 12, 4, 4], 5.0);
        let alpha = gate.coefficients(&x, &g).unwrap();
        assert_eq!(alpha.dims(), &[2, 1, 8, 8]);
        let (lo, hi) = range(&alpha);
        assert!(lo >= 0.0 && hi <= 1.0);
        let out = gate.forward(&x, &g).unwrap();
        assert_eq!(out.dims(), x.dims());
        let excess = (out.abs().unwrap() - x.abs().unwrap()).unwrap();
        assert!(scalar(&excess.max_all().unwrap()) <= 0.0);
    }
    let x = mk(0, &[1, 6, 8, 8], 1.0);
    assert!(gate.coefficients(&x, &mk(1, &[1, 12, 8, 8], 1.0)).is_err());
    assert!(gate.coefficients(&x, &mk(1, &[1, 5, 4, 4], 1.0)).is_err());
    assert!(gate.coefficients(&mk(2, &[1, 4, 8, 8], 1.0), &mk(1, &[1, 12, 4, 4], 1.0)).is_err());
}

#[test]
fn gate_gradient_matches_finite_differences() {
    let mut store = ParamStore::new(DType::F64, 8);
    let gate = AttentionGate::new(store.root().pp("g"), 2, 4).unwrap();
    let g = Tensor::from_vec(uniform(&mut rng(1), 4 * 4, -1.0, 1.0), (1, 4, 2, 2), &Device::Cpu).unwrap();
    let x = uniform(&mut rng(2), 2 * 16, -1.0, 1.0);
    let err = common::grad_check(
        |t| gate.forward(t, &g).unwrap().sqr().unwrap().sum_all().unwrap(),
        &x,
        &[1, 2, 4, 4],
        1e-4,
    );
    assert!(err < 1e-6, "{err}");
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.safetensors");
    let seg = Segmentor::new(small("PPAU-Net", 32), 4).unwrap();
    seg.forward(&input(1, 4, 32), Mode::Train).unwrap();
    seg.save(&path).unwrap();
    let loaded = Segmentor::load(&path).unwrap();
    assert_eq!(loaded.config(), seg.config());
    assert_eq!(loaded.store().hash().unwrap(), seg.store().hash().unwrap());
    let x = input(9, 2, 32);
    let a = seg.forward(&x, Mode::Eval).unwrap().final_map;
    let b = loaded.forward(&x, Mode::Eval).unwrap().final_map;
    assert_eq!(scalar(&(a - b).unwrap().abs().unwrap().max_all().unwrap()), 0.0);
}
