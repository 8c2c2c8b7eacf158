use nalgebra::{DMatrix, DVector};

use super::DifferentiableMap;
use crate::error::{check_dim, FilterError, Result};

/// Closer than this to a microphone the range gradient is treated as singular.
const MIC_COINCIDENCE: f64 = 1e-12;

/// Microphone geometry and per-microphone range variances for the simulated
/// acoustic localization scenario. Microphone 1 is the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdoaConfig {
    /// Positions `s¹..s⁴` in meters.
    pub mics: [[f64; 2]; 4],
    /// Variances `σ₁²..σ₄²` in m².
    pub sigma_sq: [f64; 4],
}

impl Default for TdoaConfig {
    /// A 4 m × 4 m room with a microphone near each corner.
    fn default() -> Self {
        Self {
            mics: [[0.0, 0.0], [4.0, 0.2], [0.3, 3.8], [4.2, 4.0]],
            sigma_sq: [1e-2; 4],
        }
    }
}

impl TdoaConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.sigma_sq.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(FilterError::InvalidConfig(format!(
                "microphone variances must be positive, got {s}"
            )));
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                if self.mics[i] == self.mics[j] {
                    return Err(FilterError::InvalidConfig(format!(
                        "microphones {} and {} coincide",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// `σ₁² 𝟙𝟙ᵀ + diag(σ₂², σ₃², σ₄²)`: every difference shares the
    /// reference microphone's error.
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        let mut r = DMatrix::from_element(3, 3, self.sigma_sq[0]);
        for j in 0..3 {
            r[(j, j)] += self.sigma_sq[j + 1];
        }
        r
    }
}

/// Range differences `r¹ − rʲ`, `j = 2, 3, 4`, from the position in `x`.
pub fn tdoa_measure(x: &DVector<f64>, cfg: &TdoaConfig) -> Result<DVector<f64>> {
    TdoaMeasurement::new(cfg.mics).eval(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdoaMeasurement {
    mics: [[f64; 2]; 4],
}

impl TdoaMeasurement {
    pub fn new(mics: [[f64; 2]; 4]) -> Self {
        Self { mics }
    }

    /// Ranges and unit vectors from each microphone to the target.
    fn geometry(&self, x: &DVector<f64>) -> Result<[(f64, [f64; 2]); 4]> {
        check_dim("TDOA state", 5, x.len())?;
        let (px, py) = (x[0], x[2]);
        let mut out = [(0.0, [0.0; 2]); 4];
        for (j, s) in self.mics.iter().enumerate() {
            let (dx, dy) = (px - s[0], py - s[1]);
            let r = dx.hypot(dy);
            if !r.is_finite() {
                return Err(FilterError::NonFinite {
                    context: "TDOA range".into(),
                });
            }
            if r < MIC_COINCIDENCE {
                return Err(FilterError::ModelDomain {
                    reason: format!("target coincides with microphone {}", j + 1),
                });
            }
            out[j] = (r, [dx / r, dy / r]);
        }
        Ok(out)
    }
}

impl DifferentiableMap for TdoaMeasurement {
    fn input_dim(&self) -> usize {
        5
    }
    fn output_dim(&self) -> usize {
        3
    }
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.geometry(x)?;
        Ok(DVector::from_fn(3, |j, _| g[0].0 - g[j + 1].0))
    }
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let g = self.geometry(x)?;
        let mut jac = DMatrix::zeros(3, 5);
        for j in 0..3 {
            let (u1, uj) = (g[0].1, g[j + 1].1);
            jac[(j, 0)] = u1[0] - uj[0];
            jac[(j, 2)] = u1[1] - uj[1];
        }
        Ok(jac)
    }
    fn name(&self) -> &str {
        "tdoa"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_square() -> TdoaConfig {
        TdoaConfig {
            mics: [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            sigma_sq: [1e-2; 4],
        }
    }

    fn at(px: f64, py: f64) -> DVector<f64> {
        DVector::from_vec(vec![px, 0.3, py, -0.2, 0.1])
    }

    #[test]
    fn measurement_examples() {
        let cfg = unit_square();
        assert_abs_diff_eq!(tdoa_measure(&at(0.5, 0.5), &cfg).unwrap(), DVector::zeros(3), epsilon = 1e-15);
        let y = tdoa_measure(&at(0.0, 0.5), &cfg).unwrap();
        let d = 0.5 - 1.25f64.sqrt();
        assert_abs_diff_eq!(y, DVector::from_vec(vec![d, 0.0, d]), epsilon = 1e-15);
        assert_abs_diff_eq!(d, -0.618034, epsilon = 1e-6);
    }

    #[test]
    fn target_on_microphone_is_an_error() {
        let cfg = unit_square();
        let err = tdoa_measure(&at(0.0, 0.0), &cfg).unwrap_err();
        assert!(matches!(err, FilterError::ModelDomain { .. }));
        assert!(TdoaMeasurement::new(cfg.mics).jacobian(&at(1.0, 1.0)).is_err());
    }

    #[test]
    fn translation_invariance() {
        let cfg = TdoaConfig::default();
        let shift = [3.7, -12.25];
        let mut moved = cfg;
        for m in moved.mics.iter_mut() {
            m[0] += shift[0];
            m[1] += shift[1];
        }
        for (px, py) in [(1.0, 2.0), (-3.0, 0.5), (2.2, 3.9)] {
            let a = tdoa_measure(&at(px, py), &cfg).unwrap();
            let b = tdoa_measure(&at(px + shift[0], py + shift[1]), &moved).unwrap();
            assert!((a - b).amax() <= 1e-12);
        }
    }

    #[test]
    fn noise_covariance_structure() {
        let cfg = TdoaConfig {
            mics: TdoaConfig::default().mics,
            sigma_sq: [1.0, 2.0, 3.0, 4.0],
        };
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(3, 3, &[
            3.0, 1.0, 1.0,
            1.0, 4.0, 1.0,
            1.0, 1.0, 5.0,
        ]);
        assert_eq!(cfg.noise_covariance(), expected);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TdoaConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.sigma_sq[2] = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TdoaConfig::default();
        cfg.mics[3] = cfg.mics[0];
        assert!(cfg.validate().is_err());
    }
}
