//! Property tests over randomly drawn models, priors and measurements.

use std::sync::Arc;

use difilter::damped::{damped_dif_step, LineSearchConfig};
use difilter::models::{make_trig_model, AffineMap, StateSpaceModel};
use difilter::{dif_step, kl_divergence, GaussianDensity, IterationConfig, Variant};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn spd(entries: &[f64], n: usize, floor: f64) -> DMatrix<f64> {
    let l = DMatrix::from_column_slice(n, n, &entries[..n * n]);
    &l * l.transpose() + DMatrix::identity(n, n) * floor
}

fn assert_psd_symmetric(p: &DMatrix<f64>) {
    assert_eq!(p, &p.transpose());
    let eig = p.clone().symmetric_eigen().eigenvalues;
    assert!(eig.min() >= -1e-10 * eig.max().abs().max(1.0), "{eig}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_models_collapse_every_variant(
        a in proptest::collection::vec(-0.6f64..0.6, 9),
        h in proptest::collection::vec(-2.0f64..2.0, 6),
        lq in proptest::collection::vec(-1.0f64..1.0, 9),
        lr in proptest::collection::vec(-1.0f64..1.0, 4),
        lp in proptest::collection::vec(-1.0f64..1.0, 9),
        m in proptest::collection::vec(-3.0f64..3.0, 3),
        y in proptest::collection::vec(-5.0f64..5.0, 2),
    ) {
        let model = StateSpaceModel::new(
            Arc::new(AffineMap::new(DMatrix::from_column_slice(3, 3, &a), DVector::zeros(3)).unwrap()),
            Arc::new(AffineMap::new(DMatrix::from_column_slice(2, 3, &h), DVector::zeros(2)).unwrap()),
            spd(&lq, 3, 0.05),
            spd(&lr, 2, 0.05),
        ).unwrap();
        let prior = GaussianDensity::new(DVector::from_column_slice(&m), spd(&lp, 3, 0.1)).unwrap();
        let y = DVector::from_column_slice(&y);
        let (reference, _) = dif_step(&prior, &y, &model, &IterationConfig::new(Variant::Ekf)).unwrap();
        for v in Variant::ALL {
            let (b, _) = dif_step(&prior, &y, &model, &IterationConfig::new(v)).unwrap();
            assert_psd_symmetric(b.posterior.cov());
            assert_psd_symmetric(b.smoothed_prev.cov());
            prop_assert!((b.posterior.mean() - reference.posterior.mean()).amax() < 1e-9);
            prop_assert!((b.posterior.cov() - reference.posterior.cov()).amax() < 1e-9);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_the_diagonal(
        m1 in proptest::collection::vec(-3.0f64..3.0, 2),
        m2 in proptest::collection::vec(-3.0f64..3.0, 2),
        l1 in proptest::collection::vec(-1.0f64..1.0, 4),
        l2 in proptest::collection::vec(-1.0f64..1.0, 4),
    ) {
        let p = GaussianDensity::new(DVector::from_column_slice(&m1), spd(&l1, 2, 0.01)).unwrap();
        let q = GaussianDensity::new(DVector::from_column_slice(&m2), spd(&l2, 2, 0.01)).unwrap();
        prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn damped_steps_never_increase_the_loss(
        m in -4.0f64..4.0,
        var in 0.1f64..3.0,
        y in -1.5f64..1.5,
    ) {
        let prior = GaussianDensity::scalar(m, var).unwrap();
        let model = make_trig_model();
        let yv = DVector::from_element(1, y);
        let (belief, trace) = damped_dif_step(
            &prior, &yv, &model, &IterationConfig::damped(Variant::Diekf), &LineSearchConfig::default(),
        ).unwrap();
        for (before, after) in trace.loss_before.iter().zip(&trace.loss_after) {
            prop_assert!(after <= before, "{after} > {before}");
        }
        prop_assert!(belief.posterior.cov()[(0, 0)] > 0.0);
    }
}
