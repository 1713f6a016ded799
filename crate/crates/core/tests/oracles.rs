mod common;

use common::*;
use mulab::datagen::{make_synthetic, SyntheticSpec, TransformDistribution};
use mulab::eval::mia_from_confidences;
use mulab::model::{init_model, ModelConfig};
use mulab::theory::{estimate_lipschitz, lipschitz_on_pairs};
use mulab::Tensor;
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn autodiff_matches_central_differences() {
    for seed in 0..20 {
        for (name, check) in gradient_errors(seed) {
            assert!(check.passed(), "seed {seed} {name}: {check:?}");
        }
    }
}

#[test]
fn mia_matches_exhaustive_sweep() {
    for seed in 0..50 {
        let (r, t, f) = mia_instance(seed);
        let got = mia_from_confidences(&r, &t, &f).unwrap().mia;
        assert_eq!(got, exhaustive_mia(&r, &t, &f), "instance {seed}: {r:?} {t:?} {f:?}");
    }
}

#[test]
fn mia_invariant_under_cubing() {
    let cube = |v: &[f64]| v.iter().map(|x| x * x * x).collect::<Vec<_>>();
    for seed in 0..50 {
        let (r, t, f) = mia_instance(seed);
        let a = mia_from_confidences(&r, &t, &f).unwrap();
        let b = mia_from_confidences(&cube(&r), &cube(&t), &cube(&f)).unwrap();
        assert_eq!(a.mia, b.mia);
        assert_eq!(a.balanced_accuracy, b.balanced_accuracy);
    }
}

proptest! {
    #[test]
    fn mia_is_a_percentage_and_order_invariant(
        r in prop::collection::vec(0.0f64..1.0, 1..20),
        t in prop::collection::vec(0.0f64..1.0, 1..20),
        f in prop::collection::vec(0.0f64..1.0, 1..20),
        shift in -3.0f64..3.0,
        scale in 0.1f64..10.0,
    ) {
        let out = mia_from_confidences(&r, &t, &f).unwrap();
        prop_assert!((0.0..=100.0).contains(&out.mia));
        prop_assert!((0.5..=1.0).contains(&out.balanced_accuracy));
        let map = |v: &[f64]| v.iter().map(|x| scale * x + shift).collect::<Vec<_>>();
        let mapped = mia_from_confidences(&map(&r), &map(&t), &map(&f)).unwrap();
        prop_assert_eq!(out.balanced_accuracy, mapped.balanced_accuracy);
        let mut rr = r.clone();
        rr.reverse();
        prop_assert_eq!(out.mia, mia_from_confidences(&rr, &t, &f).unwrap().mia);
    }
}

fn spectral_norm(w: &Tensor) -> f64 {
    let m = DMatrix::from_row_slice(w.shape()[0], w.shape()[1], w.data());
    m.singular_values().max()
}

#[test]
fn lipschitz_estimate_below_spectral_product() {
    let spec = SyntheticSpec {
        samples_per_class: 20,
        ..SyntheticSpec::ring_benchmark(3)
    };
    let (train, _) = make_synthetic(&spec).unwrap();
    let idx: Vec<usize> = (0..train.len()).collect();
    for seed in 0..5 {
        let model = init_model::<f64>(
            &ModelConfig {
                hidden_dims: vec![12, 10],
                repr_dim: 6,
                seed,
                ..ModelConfig::default()
            },
            8,
            4,
        )
        .unwrap();
        let bound: f64 = model.extractor.iter().map(|l| spectral_norm(&l.weight)).product();
        let raw = |x: &Tensor| model.features(x, false);
        for t in [TransformDistribution::simple(), TransformDistribution::strong()] {
            let l = estimate_lipschitz(&raw, &train, &idx, &t, 4, seed).unwrap();
            assert!(l > 0.0 && l <= bound * (1.0 + 1e-12), "seed {seed}: {l} > {bound}");
        }
    }
}

#[test]
fn lipschitz_of_linear_scaling_is_exact() {
    let x1 = Tensor::from_rows(&[[0.0, 1.0], [2.0, 2.0]]).unwrap();
    let x2 = Tensor::from_rows(&[[1.0, 1.0], [2.0, 5.0]]).unwrap();
    let triple = |x: &Tensor| Ok(x.scale(3.0));
    assert!((lipschitz_on_pairs(&triple, &x1, &x2).unwrap() - 3.0).abs() < 1e-12);
    // Anisotropic map: the ratio lies between the singular values.
    let diag = |x: &Tensor| x.matmul(&Tensor::from_rows(&[[2.0, 0.0], [0.0, 0.5]]).unwrap());
    let l = lipschitz_on_pairs(&diag, &x1, &x2).unwrap();
    assert!((0.5..=2.0).contains(&l));
}
