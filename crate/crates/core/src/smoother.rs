//! Time update, measurement update and one-step smoothing for an affine
//! Gaussian model `x' = A_f x + b_f + w̃`, `y = A_h x + b_h + ṽ` with
//! `w̃ ~ N(0, Q + Ω_f)` and `ṽ ~ N(0, R + Ω_h)`.
//!
//! Gains are obtained from Cholesky solves; no matrix is ever inverted.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};
use crate::gaussian::{cholesky, symmetrize, GaussianDensity};
use crate::linearization::AffineApproximation;

/// Kalman gain `K` and smoothing gain `G` of one smoother pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherGains {
    pub kalman: DMatrix<f64>,
    pub smoothing: DMatrix<f64>,
}

fn check_affine(context: &'static str, aff: &AffineApproximation, n_in: usize, n_out: usize) -> Result<()> {
    check_dim(context, n_in, aff.input_dim())?;
    check_dim(context, n_out, aff.output_dim())
}

/// `A_f P A_fᵀ + Q + Ω_f`
fn predicted_covariance(prior: &GaussianDensity, f_aff: &AffineApproximation, q: &DMatrix<f64>) -> DMatrix<f64> {
    let a = f_aff.slope();
    symmetrize(&(a * prior.cov() * a.transpose() + q + f_aff.omega()))
}

/// Solves `X S = B` for `X` given the Cholesky factor of symmetric `S`.
fn right_solve(s: &DMatrix<f64>, b: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let ch = cholesky(s, what)?;
    Ok(ch.solve(&b.transpose()).transpose())
}

pub fn time_update(
    prior: &GaussianDensity,
    f_aff: &AffineApproximation,
    q: &DMatrix<f64>,
) -> Result<GaussianDensity> {
    let n = prior.dim();
    check_affine("time update transition", f_aff, n, n)?;
    check_dim("time update process noise", n, q.nrows())?;
    let mean = f_aff.apply(prior.mean());
    GaussianDensity::from_repaired(mean, predicted_covariance(prior, f_aff, q))
}

pub fn measurement_update(
    pred: &GaussianDensity,
    y: &DVector<f64>,
    h_aff: &AffineApproximation,
    r: &DMatrix<f64>,
) -> Result<(GaussianDensity, DMatrix<f64>)> {
    let n = pred.dim();
    let m = y.len();
    check_affine("measurement update", h_aff, n, m)?;
    check_dim("measurement noise", m, r.nrows())?;
    let a = h_aff.slope();
    let p = pred.cov();
    let ap = a * p;
    let s = symmetrize(&(&ap * a.transpose() + r + h_aff.omega()));
    // K = P Aᵀ S⁻¹ = (A P)ᵀ S⁻¹
    let gain = right_solve(&s, &ap.transpose(), "innovation covariance S")?;
    let innovation = y - h_aff.apply(pred.mean());
    let mean = pred.mean() + &gain * innovation;
    let cov = p - &gain * &ap;
    let post = GaussianDensity::from_repaired(mean, cov)?;
    Ok((post, gain))
}

/// Smoothed density at the previous time given the posterior at the current
/// one. The gain and the subtracted covariance are both built from
/// `A_f P A_fᵀ + Q + Ω_f`; the mean correction uses `pred.mean()`.
pub fn smoothing_step(
    prior: &GaussianDensity,
    pred: &GaussianDensity,
    post_next: &GaussianDensity,
    f_aff: &AffineApproximation,
    q: &DMatrix<f64>,
) -> Result<(GaussianDensity, DMatrix<f64>)> {
    let n = prior.dim();
    check_affine("smoothing step transition", f_aff, n, n)?;
    check_dim("smoothing step predictive", n, pred.dim())?;
    check_dim("smoothing step posterior", n, post_next.dim())?;
    let a = f_aff.slope();
    let c = predicted_covariance(prior, f_aff, q);
    let cross = prior.cov() * a.transpose();
    let gain = right_solve(&c, &cross, "predictive covariance")?;
    let mean = prior.mean() + &gain * (post_next.mean() - pred.mean());
    let cov = prior.cov() + &gain * (post_next.cov() - &c) * gain.transpose();
    let smoothed = GaussianDensity::from_repaired(mean, cov)?;
    Ok((smoothed, gain))
}

/// One full pass: time update, measurement update, smoothing step.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherPass {
    pub predictive: GaussianDensity,
    pub posterior: GaussianDensity,
    pub smoothed_prev: GaussianDensity,
    pub gains: SmootherGains,
}

pub fn smoother_pass(
    prior: &GaussianDensity,
    y: &DVector<f64>,
    f_aff: &AffineApproximation,
    h_aff: &AffineApproximation,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<SmootherPass> {
    let predictive = time_update(prior, f_aff, q)?;
    let (posterior, kalman) = measurement_update(&predictive, y, h_aff, r)?;
    let (smoothed_prev, smoothing) = smoothing_step(prior, &predictive, &posterior, f_aff, q)?;
    Ok(SmootherPass {
        predictive,
        posterior,
        smoothed_prev,
        gains: SmootherGains { kalman, smoothing },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar(m: f64, v: f64) -> GaussianDensity {
        GaussianDensity::scalar(m, v).unwrap()
    }

    fn aff1(a: f64, b: f64, omega: f64) -> AffineApproximation {
        AffineApproximation::new(
            DMatrix::from_element(1, 1, a),
            DVector::from_element(1, b),
            DMatrix::from_element(1, 1, omega),
        )
        .unwrap()
    }

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn time_update_examples() {
        let pred = time_update(&scalar(0.0, 1.0), &aff1(1.0, 0.0, 0.0), &m1(1.0)).unwrap();
        assert_eq!(pred, scalar(0.0, 2.0));

        let pred = time_update(&scalar(1.5, 0.7), &aff1(-2.0, 0.3, 0.25), &m1(0.4)).unwrap();
        assert_abs_diff_eq!(pred.mean()[0], -2.7, epsilon = 1e-15);
        assert_abs_diff_eq!(pred.cov()[(0, 0)], 4.0 * 0.7 + 0.4 + 0.25, epsilon = 1e-15);

        let pred = time_update(&scalar(3.0, 4.0), &aff1(0.27, -0.54, 0.0), &m1(0.1)).unwrap();
        assert_abs_diff_eq!(pred.mean()[0], 0.27, epsilon = 1e-15);
        assert_abs_diff_eq!(pred.cov()[(0, 0)], 0.3916, epsilon = 1e-15);
    }

    #[test]
    fn time_update_dimension_mismatch() {
        let f = AffineApproximation::exact(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert!(time_update(&scalar(0.0, 1.0), &f, &m1(1.0)).is_err());
    }

    #[test]
    fn measurement_update_examples() {
        let y = DVector::from_element(1, 1.0);
        let (post, gain) = measurement_update(&scalar(0.0, 2.0), &y, &aff1(1.0, 0.0, 0.0), &m1(1.0)).unwrap();
        assert_abs_diff_eq!(gain[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(post.mean()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(post.cov()[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);

        // zero innovation
        let h = aff1(2.0, 0.5, 0.1);
        let y = DVector::from_element(1, 2.0 * 1.25 + 0.5);
        let (post, _) = measurement_update(&scalar(1.25, 0.3), &y, &h, &m1(0.2)).unwrap();
        assert_eq!(post.mean()[0], 1.25);

        // uninformative measurement
        let (post, gain) =
            measurement_update(&scalar(1.25, 0.3), &DVector::from_element(1, 9.0), &aff1(0.0, 3.0, 0.0), &m1(0.2))
                .unwrap();
        assert_eq!(gain[(0, 0)], 0.0);
        assert_eq!(post, scalar(1.25, 0.3));
    }

    #[test]
    fn singular_innovation_is_reported() {
        let err = measurement_update(&scalar(0.0, 0.0), &DVector::zeros(1), &aff1(1.0, 0.0, 0.0), &m1(0.0))
            .unwrap_err();
        assert!(err.to_string().contains("innovation covariance S"), "{err}");
        assert!(err.to_string().contains("condition estimate"), "{err}");
    }

    #[test]
    fn smoothing_step_examples() {
        let prior = scalar(0.0, 1.0);
        let f = aff1(1.0, 0.0, 0.0);
        let pred = time_update(&prior, &f, &m1(1.0)).unwrap();
        let (smoothed, _) = smoothing_step(&prior, &pred, &pred, &f, &m1(1.0)).unwrap();
        assert_eq!(smoothed, prior);

        let post = scalar(2.0 / 3.0, 2.0 / 3.0);
        let (smoothed, gain) = smoothing_step(&prior, &pred, &post, &f, &m1(1.0)).unwrap();
        assert_abs_diff_eq!(gain[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(smoothed.mean()[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(smoothed.cov()[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);

        let f = aff1(0.0, 4.0, 0.5);
        let pred = time_update(&prior, &f, &m1(1.0)).unwrap();
        let (smoothed, gain) = smoothing_step(&prior, &pred, &scalar(7.0, 0.1), &f, &m1(1.0)).unwrap();
        assert_eq!(gain[(0, 0)], 0.0);
        assert_eq!(smoothed, prior);
    }

    #[test]
    fn smoothing_step_singular_predictive() {
        let prior = scalar(0.0, 1.0);
        let f = aff1(0.0, 0.0, 0.0);
        let pred = scalar(0.0, 0.0);
        assert!(smoothing_step(&prior, &pred, &pred, &f, &m1(0.0)).is_err());
    }

    fn random_spd(n: usize, entries: &[f64], floor: f64) -> DMatrix<f64> {
        let l = DMatrix::from_column_slice(n, n, &entries[..n * n]);
        &l * l.transpose() + DMatrix::identity(n, n) * floor
    }

    proptest! {
        #[test]
        fn update_shrinks_and_smoothing_contracts(
            n in 1usize..5,
            m in 1usize..4,
            p in proptest::collection::vec(-1.0f64..1.0, 16),
            q in proptest::collection::vec(-1.0f64..1.0, 16),
            r in proptest::collection::vec(-1.0f64..1.0, 9),
            a in proptest::collection::vec(-1.5f64..1.5, 16),
            h in proptest::collection::vec(-1.5f64..1.5, 12),
            y in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let prior = GaussianDensity::new(DVector::zeros(n), random_spd(n, &p, 0.05)).unwrap();
            let qm = random_spd(n, &q, 0.01);
            let rm = random_spd(m, &r, 0.1);
            let f = AffineApproximation::exact(DMatrix::from_column_slice(n, n, &a[..n * n]), DVector::zeros(n)).unwrap();
            let hm = AffineApproximation::exact(DMatrix::from_column_slice(m, n, &h[..m * n]), DVector::zeros(m)).unwrap();
            let pass = smoother_pass(&prior, &DVector::from_column_slice(&y[..m]), &f, &hm, &qm, &rm).unwrap();

            for d in [&pass.predictive, &pass.posterior, &pass.smoothed_prev] {
                prop_assert_eq!(d.cov(), &d.cov().transpose());
            }
            let gap = pass.predictive.cov() - pass.posterior.cov();
            let scale = pass.predictive.cov().amax();
            prop_assert!(gap.symmetric_eigen().eigenvalues.min() >= -1e-10 * scale);
            prop_assert!(pass.posterior.cov().trace() <= pass.predictive.cov().trace() + 1e-12 * scale);
            prop_assert!(pass.smoothed_prev.cov().trace() <= prior.cov().trace() + 1e-10 * prior.cov().amax());
        }
    }
}
