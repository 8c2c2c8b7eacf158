use nalgebra::{DMatrix, DVector};

use super::DifferentiableMap;
use crate::error::{check_dim, FilterError, Result};

/// Below this turn rate the transition uses its constant-velocity limit.
pub const TURN_RATE_EPS: f64 = 1e-9;

/// Below this `|Tω|` the turn-rate derivatives use their Taylor series; the
/// closed forms cancel catastrophically there.
const SERIES_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinatedTurnConfig {
    /// Sampling period `T` in seconds.
    pub period: f64,
    /// Position/velocity noise intensity.
    pub q1: f64,
    /// Turn-rate noise intensity.
    pub q2: f64,
}

impl CoordinatedTurnConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("T", self.period), ("q1", self.q1), ("q2", self.q2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FilterError::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// `sin(Tω)/ω` and `(1 − cos(Tω))/ω`.
fn turn_coefficients(period: f64, omega: f64) -> (f64, f64) {
    if omega.abs() < TURN_RATE_EPS {
        let t = period;
        (t - t * t * t * omega * omega / 6.0, 0.5 * t * t * omega)
    } else {
        let half = 0.5 * period * omega;
        ((period * omega).sin() / omega, 2.0 * half.sin().powi(2) / omega)
    }
}

/// Derivatives of [`turn_coefficients`] with respect to `ω`.
fn turn_coefficient_derivatives(period: f64, omega: f64) -> (f64, f64) {
    let t = period;
    let x = t * omega;
    if x.abs() < SERIES_THRESHOLD {
        let w2 = omega * omega;
        let ds = -t.powi(3) * omega / 3.0 + t.powi(5) * omega * w2 / 30.0;
        let dc = 0.5 * t * t - t.powi(4) * w2 / 8.0 + t.powi(6) * w2 * w2 / 144.0;
        (ds, dc)
    } else {
        let (s, c) = x.sin_cos();
        let one_minus_cos = 2.0 * (0.5 * x).sin().powi(2);
        let w2 = omega * omega;
        ((x * c - s) / w2, (x * s - one_minus_cos) / w2)
    }
}

/// Coordinated-turn transition on `[pˣ, vˣ, pʸ, vʸ, ω]`.
pub fn ct_transition(x: &DVector<f64>, cfg: &CoordinatedTurnConfig) -> DVector<f64> {
    CoordinatedTurn::new(cfg.period).apply(x)
}

/// `blkdiag(B, B, q₂)` with `B = q₁ [[T³/3, T²/2], [T²/2, T]]`.
pub fn ct_process_noise(cfg: &CoordinatedTurnConfig) -> DMatrix<f64> {
    let t = cfg.period;
    let mut q = DMatrix::zeros(5, 5);
    for base in [0, 2] {
        q[(base, base)] = cfg.q1 * t.powi(3) / 3.0;
        q[(base, base + 1)] = cfg.q1 * t * t / 2.0;
        q[(base + 1, base)] = cfg.q1 * t * t / 2.0;
        q[(base + 1, base + 1)] = cfg.q1 * t;
    }
    q[(4, 4)] = cfg.q2;
    q
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinatedTurn {
    pub period: f64,
}

impl CoordinatedTurn {
    pub fn new(period: f64) -> Self {
        Self { period }
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let (px, vx, py, vy, omega) = (x[0], x[1], x[2], x[3], x[4]);
        let (s_w, c_w) = turn_coefficients(self.period, omega);
        let (s, c) = (self.period * omega).sin_cos();
        DVector::from_vec(vec![
            px + s_w * vx - c_w * vy,
            c * vx - s * vy,
            py + c_w * vx + s_w * vy,
            s * vx + c * vy,
            omega,
        ])
    }
}

impl DifferentiableMap for CoordinatedTurn {
    fn input_dim(&self) -> usize {
        5
    }
    fn output_dim(&self) -> usize {
        5
    }
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("coordinated turn state", 5, x.len())?;
        Ok(self.apply(x))
    }
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("coordinated turn state", 5, x.len())?;
        let t = self.period;
        let (vx, vy, omega) = (x[1], x[3], x[4]);
        let (s_w, c_w) = turn_coefficients(t, omega);
        let (ds, dc) = turn_coefficient_derivatives(t, omega);
        let (s, c) = (t * omega).sin_cos();
        #[rustfmt::skip]
        let jac = DMatrix::from_row_slice(5, 5, &[
            1.0, s_w, 0.0, -c_w, ds * vx - dc * vy,
            0.0, c,   0.0, -s,   -t * s * vx - t * c * vy,
            0.0, c_w, 1.0, s_w,  dc * vx + ds * vy,
            0.0, s,   0.0, c,    t * c * vx - t * s * vy,
            0.0, 0.0, 0.0, 0.0,  1.0,
        ]);
        Ok(jac)
    }
    fn name(&self) -> &str {
        "coordinated-turn"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::finite_difference_jacobian;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn cfg(period: f64, q1: f64, q2: f64) -> CoordinatedTurnConfig {
        CoordinatedTurnConfig { period, q1, q2 }
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn transition_examples() {
        let c = cfg(1.0, 1.0, 1.0);
        assert_eq!(ct_transition(&v(&[0.0, 1.0, 0.0, 0.0, 0.0]), &c), v(&[1.0, 1.0, 0.0, 0.0, 0.0]));
        for w in [-2.0, 0.3, 1e-12, 5.0] {
            assert_eq!(ct_transition(&v(&[0.0, 0.0, 0.0, 0.0, w]), &c), v(&[0.0, 0.0, 0.0, 0.0, w]));
        }
        let out = ct_transition(&v(&[0.0, 1.0, 0.0, 0.0, PI]), &c);
        assert_abs_diff_eq!(out, v(&[0.0, -1.0, 2.0 / PI, 0.0, PI]), epsilon = 1e-15);
    }

    #[test]
    fn process_noise_examples() {
        let q = ct_process_noise(&cfg(1.0, 1.0, 1.0));
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(5, 5, &[
            1.0 / 3.0, 0.5, 0.0, 0.0, 0.0,
            0.5, 1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 1.0 / 3.0, 0.5, 0.0,
            0.0, 0.0, 0.5, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 1.0,
        ]);
        assert_abs_diff_eq!(q, expected, epsilon = 1e-15);

        let q = ct_process_noise(&cfg(2.0, 3.0, 0.01));
        assert_abs_diff_eq!(q[(0, 0)], 8.0, epsilon = 1e-14);
        assert_abs_diff_eq!(q[(0, 1)], 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(q[(1, 1)], 6.0, epsilon = 1e-14);
        assert_eq!(q[(4, 4)], 0.01);

        // q1 → 0 boundary: only the turn-rate entry survives.
        let q = ct_process_noise(&cfg(1.0, 0.0, 0.5));
        assert_eq!(q.iter().filter(|&&e| e != 0.0).count(), 1);
        assert!(cfg(1.0, 0.0, 0.5).validate().is_err());
    }

    #[test]
    fn process_noise_is_positive_definite() {
        for q1 in [1e-6, 1e-3, 1.0, 1e3] {
            for q2 in [1e-5, 1e-2, 1.0] {
                for t in [0.1, 1.0, 2.0] {
                    assert!(ct_process_noise(&cfg(t, q1, q2)).cholesky().is_some());
                }
            }
        }
    }

    #[test]
    fn continuous_across_turn_rate_switch() {
        let c = cfg(1.0, 1.0, 1.0);
        for heading in [0.0, 0.7, 2.0, -2.5] {
            let (vy, vx) = f64::sin_cos(heading);
            let limit = ct_transition(&v(&[1.0, vx, -2.0, vy, 0.0]), &c);
            for w in [1e-9, -1e-9, 0.999_999e-9, -0.999_999e-9] {
                let out = ct_transition(&v(&[1.0, vx, -2.0, vy, w]), &c);
                assert!((out.rows(0, 4) - limit.rows(0, 4)).amax() <= 1e-8);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_including_small_turn_rates() {
        let f = CoordinatedTurn::new(1.0);
        for w in [0.0, 1e-10, 1e-6, 1e-4, 1e-3, 0.1, -0.7, 2.0] {
            let x = v(&[3.0, 10.0, -1.0, 4.0, w]);
            let j = f.jacobian(&x).unwrap();
            let fd = finite_difference_jacobian(&f, &x).unwrap();
            assert!((j - fd).amax() <= 1e-5, "omega {w}");
        }
    }
}
