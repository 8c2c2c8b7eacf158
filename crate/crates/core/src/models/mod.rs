//! State-space models `x' = f(x) + w`, `y = h(x) + v` and the concrete
//! systems used by the experiments.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, FilterError, Result};
use crate::gaussian::{cholesky, symmetrize, GaussianDensity};

mod affine;
mod coordinated_turn;
mod scalar;
mod tdoa;

pub use affine::{AffineMap, PositionMeasurement};
pub use coordinated_turn::{ct_process_noise, ct_transition, CoordinatedTurn, CoordinatedTurnConfig};
pub use scalar::{Arctan, Cubic, TrigDynamics};
pub use tdoa::{tdoa_measure, TdoaConfig, TdoaMeasurement};

/// A vector-valued map with a Jacobian.
///
/// Implementors that have no closed-form Jacobian can rely on the default,
/// a central finite difference.
pub trait DifferentiableMap: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        finite_difference_jacobian(self, x)
    }

    fn name(&self) -> &str {
        "map"
    }
}

/// Central-difference Jacobian with step `√ε · max(1, |xᵢ|)`.
pub fn finite_difference_jacobian<M: DifferentiableMap + ?Sized>(
    map: &M,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_dim("jacobian input", map.input_dim(), x.len())?;
    let n = x.len();
    let m = map.output_dim();
    let mut jac = DMatrix::zeros(m, n);
    let sqrt_eps = f64::EPSILON.sqrt();
    for j in 0..n {
        let h = sqrt_eps * x[j].abs().max(1.0);
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[j] += h;
        minus[j] -= h;
        let step = plus[j] - minus[j];
        let diff = (map.eval(&plus)? - map.eval(&minus)?) / step;
        jac.set_column(j, &diff);
    }
    Ok(jac)
}

/// Wraps a closure as a map whose Jacobian comes from finite differences.
pub struct FnMap<F> {
    input_dim: usize,
    output_dim: usize,
    f: F,
}

impl<F> FnMap<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    pub fn new(input_dim: usize, output_dim: usize, f: F) -> Self {
        Self {
            input_dim,
            output_dim,
            f,
        }
    }
}

impl<F> DifferentiableMap for FnMap<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("map input", self.input_dim, x.len())?;
        let y = (self.f)(x);
        check_dim("map output", self.output_dim, y.len())?;
        Ok(y)
    }
    fn name(&self) -> &str {
        "closure"
    }
}

pub type SharedMap = Arc<dyn DifferentiableMap>;

/// Transition and measurement maps together with additive noise covariances.
#[derive(Clone)]
pub struct StateSpaceModel {
    transition: SharedMap,
    measurement: SharedMap,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl fmt::Debug for StateSpaceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateSpaceModel")
            .field("transition", &self.transition.name())
            .field("measurement", &self.measurement.name())
            .field("q", &self.q)
            .field("r", &self.r)
            .finish()
    }
}

fn check_psd(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    // Reuse the density invariant: symmetric, eigenvalues ≥ -1e-10·λ_max.
    let n = m.nrows();
    let g = GaussianDensity::new(DVector::zeros(n), m.clone()).map_err(|e| match e {
        FilterError::NotPositiveSemiDefinite {
            min_eigenvalue,
            max_eigenvalue,
            ..
        } => FilterError::NotPositiveSemiDefinite {
            what,
            min_eigenvalue,
            max_eigenvalue,
        },
        other => other,
    })?;
    Ok(g.cov().clone())
}

impl StateSpaceModel {
    /// `q` must be PSD and `r` positive definite.
    pub fn new(transition: SharedMap, measurement: SharedMap, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let model = Self::with_psd_noise(transition, measurement, q, r)?;
        cholesky(&model.r, "measurement noise R")?;
        Ok(model)
    }

    /// Like [`StateSpaceModel::new`] but only requires `r` to be PSD. Such a
    /// model can be simulated, filters may reject it.
    pub fn with_psd_noise(
        transition: SharedMap,
        measurement: SharedMap,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let n = transition.input_dim();
        check_dim("transition output", n, transition.output_dim())?;
        check_dim("measurement input", n, measurement.input_dim())?;
        check_dim("process noise Q", n, q.nrows())?;
        check_dim("process noise Q", n, q.ncols())?;
        let m = measurement.output_dim();
        check_dim("measurement noise R", m, r.nrows())?;
        check_dim("measurement noise R", m, r.ncols())?;
        let q = check_psd(&symmetrize(&q), "process noise Q")?;
        let r = check_psd(&symmetrize(&r), "measurement noise R")?;
        Ok(Self {
            transition,
            measurement,
            q,
            r,
        })
    }

    pub fn transition(&self) -> &dyn DifferentiableMap {
        self.transition.as_ref()
    }

    pub fn measurement(&self) -> &dyn DifferentiableMap {
        self.measurement.as_ref()
    }

    pub fn shared_transition(&self) -> SharedMap {
        Arc::clone(&self.transition)
    }

    pub fn shared_measurement(&self) -> SharedMap {
        Arc::clone(&self.measurement)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn state_dim(&self) -> usize {
        self.transition.input_dim()
    }

    pub fn measurement_dim(&self) -> usize {
        self.measurement.output_dim()
    }
}

fn scalar_matrix(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// `x' = 0.01 x³ + w`, `y = x + v`, `Q = R = 0.1`.
pub fn make_illustration_model() -> StateSpaceModel {
    StateSpaceModel::new(
        Arc::new(Cubic::new(0.01)),
        Arc::new(AffineMap::identity(1)),
        scalar_matrix(0.1),
        scalar_matrix(0.1),
    )
    .expect("illustration model is well formed")
}

/// `x' = cos(x) sin(x) x² + w`, `y = arctan(x) + v`, `Q = 0.1`, `R = 1`.
pub fn make_trig_model() -> StateSpaceModel {
    StateSpaceModel::new(
        Arc::new(TrigDynamics),
        Arc::new(Arctan),
        scalar_matrix(0.1),
        scalar_matrix(1.0),
    )
    .expect("trig model is well formed")
}

/// Coordinated-turn dynamics observed through a noisy Cartesian position,
/// `R = σ² I₂`.
pub fn make_tracking_model(ct: &CoordinatedTurnConfig, sigma_sq: f64) -> Result<StateSpaceModel> {
    ct.validate()?;
    if !(sigma_sq > 0.0) {
        return Err(FilterError::InvalidConfig(format!(
            "measurement variance must be positive, got {sigma_sq}"
        )));
    }
    StateSpaceModel::new(
        Arc::new(CoordinatedTurn::new(ct.period)),
        Arc::new(PositionMeasurement::new()),
        ct_process_noise(ct),
        DMatrix::identity(2, 2) * sigma_sq,
    )
}

/// Coordinated-turn dynamics with range-difference measurements.
pub fn make_tdoa_model(ct: &CoordinatedTurnConfig, tdoa: &TdoaConfig) -> Result<StateSpaceModel> {
    ct.validate()?;
    tdoa.validate()?;
    StateSpaceModel::new(
        Arc::new(CoordinatedTurn::new(ct.period)),
        Arc::new(TdoaMeasurement::new(tdoa.mics)),
        ct_process_noise(ct),
        tdoa.noise_covariance(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn illustration_model_values() {
        let m = make_illustration_model();
        assert_eq!(m.transition().eval(&v(&[0.0])).unwrap()[0], 0.0);
        assert_abs_diff_eq!(m.transition().eval(&v(&[3.0])).unwrap()[0], 0.27, epsilon = 1e-15);
        assert_abs_diff_eq!(m.transition().jacobian(&v(&[3.0])).unwrap()[(0, 0)], 0.27, epsilon = 1e-15);
        assert_eq!(m.q()[(0, 0)], 0.1);
        assert_eq!(m.r()[(0, 0)], 0.1);
    }

    #[test]
    fn trig_model_values() {
        let m = make_trig_model();
        assert_eq!(m.transition().eval(&v(&[0.0])).unwrap()[0], 0.0);
        assert_eq!(m.measurement().eval(&v(&[0.0])).unwrap()[0], 0.0);
        let x = std::f64::consts::FRAC_PI_4;
        assert_abs_diff_eq!(
            m.transition().eval(&v(&[x])).unwrap()[0],
            0.5 * x * x,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(0.5 * x * x, 0.30843, epsilon = 1e-5);
    }

    #[test]
    fn model_rejects_inconsistent_noise() {
        let f: SharedMap = Arc::new(Cubic::new(1.0));
        let h: SharedMap = Arc::new(AffineMap::identity(1));
        assert!(StateSpaceModel::new(f.clone(), h.clone(), DMatrix::identity(2, 2), scalar_matrix(1.0)).is_err());
        assert!(StateSpaceModel::new(f.clone(), h.clone(), scalar_matrix(1.0), scalar_matrix(0.0)).is_err());
        assert!(StateSpaceModel::new(f.clone(), h.clone(), scalar_matrix(-1.0), scalar_matrix(1.0)).is_err());
        assert!(StateSpaceModel::with_psd_noise(f, h, scalar_matrix(0.0), scalar_matrix(0.0)).is_ok());
    }

    #[test]
    fn fn_map_uses_finite_differences() {
        let g = FnMap::new(2, 1, |x: &DVector<f64>| DVector::from_element(1, x[0] * x[1]));
        let j = g.jacobian(&v(&[2.0, 3.0])).unwrap();
        assert_abs_diff_eq!(j[(0, 0)], 3.0, epsilon = 1e-7);
        assert_abs_diff_eq!(j[(0, 1)], 2.0, epsilon = 1e-7);
        assert!(g.eval(&v(&[1.0])).is_err());
    }
}
