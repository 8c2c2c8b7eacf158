//! Python bindings: Gaussian densities, the experiment models, the filter
//! family and the simulator. Vectors and matrices cross the boundary as
//! nested lists of floats.

use difilter::bench::{simulate as simulate_rs, FilterSpec, Scenario, Truth};
use difilter::models::{
    make_illustration_model, make_tdoa_model, make_tracking_model, make_trig_model, CoordinatedTurnConfig,
    StateSpaceModel, TdoaConfig,
};
use difilter::{kl_divergence, run_filter, FilterError, GaussianDensity, LagOneBelief};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: FilterError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Multivariate normal density.
#[pyclass(name = "Gaussian", module = "pydifilter", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGaussian {
    inner: GaussianDensity,
}

#[pymethods]
impl PyGaussian {
    #[new]
    fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = GaussianDensity::new(vector(&mean), matrix(&cov)?).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn scalar(mean: f64, var: f64) -> PyResult<Self> {
        Ok(Self {
            inner: GaussianDensity::scalar(mean, var).map_err(err)?,
        })
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().iter().copied().collect()
    }

    #[getter]
    fn cov(&self) -> Vec<Vec<f64>> {
        rows(self.inner.cov())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_pdf(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.log_pdf(&vector(&x)).map_err(err)
    }

    /// `KL(self ‖ other)`.
    fn kl(&self, other: PyRef<'_, PyGaussian>) -> PyResult<f64> {
        kl_divergence(&self.inner, &other.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Gaussian(mean={:?}, cov={:?})", self.mean(), self.cov())
    }
}

/// A state-space model `x_k = f(x_{k−1}) + q`, `y_k = h(x_k) + r`.
#[pyclass(name = "Model", module = "pydifilter", frozen)]
struct PyModel {
    inner: StateSpaceModel,
    name: String,
}

#[pymethods]
impl PyModel {
    /// Scalar cubic transition with affine measurement.
    #[staticmethod]
    fn cubic() -> Self {
        Self {
            inner: make_illustration_model(),
            name: "cubic".into(),
        }
    }

    /// Scalar `x² sin x cos x` transition with arctangent measurement.
    #[staticmethod]
    fn trig() -> Self {
        Self {
            inner: make_trig_model(),
            name: "trig".into(),
        }
    }

    /// Coordinated turn with position measurements of variance `sigma_sq`.
    #[staticmethod]
    #[pyo3(signature = (q1, sigma_sq, period = 1.0, q2 = 0.01))]
    fn tracking(q1: f64, sigma_sq: f64, period: f64, q2: f64) -> PyResult<Self> {
        let ct = CoordinatedTurnConfig { period, q1, q2 };
        Ok(Self {
            inner: make_tracking_model(&ct, sigma_sq).map_err(err)?,
            name: "tracking".into(),
        })
    }

    /// Coordinated turn observed through time differences of arrival.
    #[staticmethod]
    #[pyo3(signature = (q1, q2, period = 0.5))]
    fn tdoa(q1: f64, q2: f64, period: f64) -> PyResult<Self> {
        let ct = CoordinatedTurnConfig { period, q1, q2 };
        Ok(Self {
            inner: make_tdoa_model(&ct, &TdoaConfig::default()).map_err(err)?,
            name: "tdoa".into(),
        })
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    #[getter]
    fn measurement_dim(&self) -> usize {
        self.inner.r().nrows()
    }

    fn transition(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.transition().eval(&vector(&x)).map_err(err)?.iter().copied().collect())
    }

    fn measure(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.measurement().eval(&vector(&x)).map_err(err)?.iter().copied().collect())
    }

    fn __repr__(&self) -> String {
        format!("Model({}, state_dim={})", self.name, self.inner.state_dim())
    }
}

/// Filtering posterior and one-step smoothed previous state.
#[pyclass(name = "Belief", module = "pydifilter", frozen)]
struct PyBelief {
    #[pyo3(get)]
    posterior: Py<PyGaussian>,
    #[pyo3(get)]
    smoothed_prev: Py<PyGaussian>,
}

impl PyBelief {
    fn from_rs(py: Python<'_>, b: LagOneBelief) -> PyResult<Self> {
        Ok(Self {
            posterior: Py::new(py, PyGaussian { inner: b.posterior })?,
            smoothed_prev: Py::new(py, PyGaussian { inner: b.smoothed_prev })?,
        })
    }
}

/// Filter names accepted by `run`.
#[pyfunction]
fn filters() -> Vec<String> {
    FilterSpec::ALL.iter().map(ToString::to_string).collect()
}

/// Runs one filter over a measurement sequence.
#[pyfunction]
#[pyo3(signature = (model, prior, measurements, filter = "diekf", max_iters = None))]
fn run(
    py: Python<'_>,
    model: PyRef<'_, PyModel>,
    prior: PyRef<'_, PyGaussian>,
    measurements: Vec<Vec<f64>>,
    filter: &str,
    max_iters: Option<usize>,
) -> PyResult<Vec<PyBelief>> {
    let spec: FilterSpec = filter.parse().map_err(err)?;
    let mut cfg = spec.iteration_config();
    if let Some(n) = max_iters {
        cfg.max_iters = n;
    }
    let ys: Vec<DVector<f64>> = measurements.iter().map(|y| vector(y)).collect();
    let (prior, model) = (prior.inner.clone(), model.inner.clone());
    let beliefs = py.detach(|| run_filter(&prior, &ys, &model, &cfg)).map_err(err)?;
    beliefs.into_iter().map(|b| PyBelief::from_rs(py, b)).collect()
}

/// Draws `(states, measurements)` from `model` starting at `x0`.
#[pyfunction]
#[pyo3(signature = (model, x0, steps, seed = 0))]
fn simulate(model: PyRef<'_, PyModel>, x0: Vec<f64>, steps: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let n = x0.len();
    let scenario = Scenario {
        model: model.inner.clone(),
        prior: GaussianDensity::new(vector(&x0), DMatrix::identity(n, n)).map_err(err)?,
        true_x0: vector(&x0),
        steps,
        seed,
        truth: Truth::Simulated,
    };
    let sim = simulate_rs(&scenario).map_err(err)?;
    let list = |v: &[DVector<f64>]| v.iter().map(|x| x.iter().copied().collect()).collect();
    Ok((list(&sim.states), list(&sim.measurements)))
}

#[pymodule]
fn pydifilter(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGaussian>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyBelief>()?;
    m.add_function(wrap_pyfunction!(filters, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
