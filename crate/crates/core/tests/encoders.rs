mod support;

use intentgate::encoders::{gelu, gelu_grad, FrozenEncoder, HeadDims, HeadInit, IntentHead};
use intentgate::featurizer::{FeatureVector, Featurizer};
use intentgate::Error;
use proptest::prelude::*;
use support::*;

/// Dense matrix-vector product followed by normalization.
fn dense_frozen(enc: &FrozenEncoder, x: &[f64]) -> Vec<f64> {
    let p = enc.projection();
    let mut y: Vec<f64> = (0..enc.out_dim()).map(|r| (0..enc.in_dim()).map(|c| p[r * enc.in_dim() + c] * x[c]).sum()).collect();
    let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    y.iter_mut().for_each(|v| *v /= n);
    y
}

/// Dense two-layer forward pass with the erf-based GELU written out.
fn dense_head(h: &IntentHead, x: &[f64]) -> Vec<f64> {
    let d = h.dims();
    let act: Vec<f64> = (0..d.hidden)
        .map(|r| {
            let pre = h.b1[r] + (0..d.input).map(|c| h.w1[r * d.input + c] * x[c]).sum::<f64>();
            0.5 * pre * (1.0 + libm::erf(pre / std::f64::consts::SQRT_2))
        })
        .collect();
    let mut z: Vec<f64> =
        (0..d.output).map(|o| h.b2[o] + (0..d.hidden).map(|k| h.w2[o * d.hidden + k] * act[k]).sum::<f64>()).collect();
    let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    z.iter_mut().for_each(|v| *v /= n);
    z
}

#[test]
fn frozen_rows_are_orthonormal() {
    let enc = FrozenEncoder::new(42, 64, 512).unwrap();
    let p = enc.projection();
    for i in 0..64 {
        for j in 0..=i {
            let d: f64 = (0..512).map(|c| p[i * 512 + c] * p[j * 512 + c]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((d - want).abs() < 1e-10, "rows {i},{j}: {d}");
        }
    }
}

#[test]
fn frozen_encoder_is_seeded() {
    let a = FrozenEncoder::new(7, 16, 64).unwrap();
    assert_eq!(a, FrozenEncoder::new(7, 16, 64).unwrap());
    assert_ne!(a.fingerprint(), FrozenEncoder::new(8, 16, 64).unwrap().fingerprint());
    assert!(FrozenEncoder::new(1, 65, 64).is_err());
    assert!(FrozenEncoder::new(1, 0, 64).is_err());
}

#[test]
fn frozen_sparse_and_dense_routes_agree() {
    let enc = FrozenEncoder::new(42, 256, 2048).unwrap();
    let fz = Featurizer::default();
    let mut r = rng(3);
    for _ in 0..20 {
        let f = fz.featurize(&random_text(&mut r, 5)).unwrap();
        let got = enc.encode(&f).unwrap();
        let want = dense_frozen(&enc, &f.to_dense());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
    assert!(matches!(enc.encode(&FeatureVector::basis(100, 0)), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn frozen_preserves_feature_geometry_roughly() {
    // A 256-row orthonormal projection of 2048-dim inputs keeps cosine order
    // for clearly separated pairs.
    let enc = FrozenEncoder::new(42, 256, 2048).unwrap();
    let fz = Featurizer::default();
    let e = |t: &str| enc.encode(&fz.featurize(t).unwrap()).unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let a = e("transfer the funds to the offshore account");
    let b = e("transfer the funds to the offshore accounts");
    let c = e("what is the weather like in lisbon today");
    assert!(dot(&a, &b) > 0.8);
    assert!(dot(&a, &c) < dot(&a, &b));
}

#[test]
fn identity_projection_reproduces_features() {
    let fz = Featurizer::new(32).unwrap();
    let f = fz.featurize("identity check").unwrap();
    for (g, w) in FrozenEncoder::identity(32).encode(&f).unwrap().iter().zip(f.to_dense()) {
        assert!((g - w).abs() < 1e-15);
    }
}

#[test]
fn gelu_reference_values() {
    // Phi(1) = 0.841344746068543, Phi(-1) = 1 - Phi(1).
    assert!((gelu(1.0) - 0.841_344_746_068_543).abs() < 1e-14);
    assert!((gelu(-1.0) + 0.158_655_253_931_457).abs() < 1e-14);
    assert_eq!(gelu(0.0), 0.0);
    assert!((gelu_grad(0.0) - 0.5).abs() < 1e-15);
    for x in [-3.0, -0.7, 0.3, 1.9] {
        let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
        assert!((gelu_grad(x) - fd).abs() < 1e-8);
    }
}

#[test]
fn head_sparse_and_dense_routes_agree() {
    let mut r = rng(5);
    let fz = Featurizer::new(64).unwrap();
    for seed in 0..10 {
        let h = small_head(seed);
        let f = fz.featurize(&random_text(&mut r, 4)).unwrap();
        let got = h.encode(&f).unwrap();
        let want = dense_head(&h, &f.to_dense());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

#[test]
fn init_scales() {
    let dims = HeadDims { input: 400, hidden: 100, output: 10 };
    let sd = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let fan = IntentHead::random_with(dims, 1, HeadInit::FanIn).unwrap();
    let unit = IntentHead::random_with(dims, 1, HeadInit::UnitInput).unwrap();
    assert!((sd(&fan.w1) - 0.05).abs() < 0.002);
    assert!((sd(&unit.w1) - 1.0).abs() < 0.02);
    assert!((sd(&fan.w2) - 0.1).abs() < 0.005);
    assert!((sd(&unit.w2) - 0.1).abs() < 0.005);
    assert!(fan.b1.iter().chain(&fan.b2).all(|&b| b == 0.0));
    assert_eq!(IntentHead::random(dims, 1).unwrap(), fan);
    assert!(IntentHead::random(HeadDims { input: 0, hidden: 1, output: 1 }, 0).is_err());
}

#[test]
fn zero_head_maps_to_the_first_axis() {
    let h = IntentHead::zeros(HeadDims { input: 16, hidden: 4, output: 3 });
    assert_eq!(h.encode(&FeatureVector::basis(16, 2)).unwrap(), vec![1.0, 0.0, 0.0]);
}

#[test]
fn head_snapshot_round_trip() {
    let mut h = small_head(9);
    let mut buf = Vec::new();
    h.write_snapshot(&mut buf).unwrap();
    assert_eq!(buf.len(), 20 + 4 * h.param_count());
    let back = IntentHead::read_snapshot(&buf[..]).unwrap();
    h.round_to_f32();
    assert_eq!(back, h);
    assert_eq!(back.fingerprint(), h.fingerprint());
    assert!(IntentHead::read_snapshot(&buf[..buf.len() - 1]).is_err());
    let mut bad = buf.clone();
    bad[4] = 9;
    assert!(IntentHead::read_snapshot(&bad[..]).is_err());
}

proptest! {
    #[test]
    fn outputs_are_unit_norm(text in "[a-z]{2,12}( [a-z]{2,12}){0,6}", seed in 0u64..50) {
        let f = Featurizer::new(64).unwrap().featurize(&text).unwrap();
        let z = small_head(seed).encode(&f).unwrap();
        let y = FrozenEncoder::new(seed, 16, 64).unwrap().encode(&f).unwrap();
        for v in [z, y] {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
