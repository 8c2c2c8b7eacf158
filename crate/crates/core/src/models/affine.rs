use nalgebra::{DMatrix, DVector};

use super::DifferentiableMap;
use crate::error::{check_dim, Result};

/// `g(x) = A x + b`
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    slope: DMatrix<f64>,
    offset: DVector<f64>,
}

impl AffineMap {
    pub fn new(slope: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        check_dim("affine offset", slope.nrows(), offset.len())?;
        Ok(Self { slope, offset })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            slope: DMatrix::identity(n, n),
            offset: DVector::zeros(n),
        }
    }

    pub fn slope(&self) -> &DMatrix<f64> {
        &self.slope
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }
}

impl DifferentiableMap for AffineMap {
    fn input_dim(&self) -> usize {
        self.slope.ncols()
    }
    fn output_dim(&self) -> usize {
        self.slope.nrows()
    }
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("affine map input", self.input_dim(), x.len())?;
        Ok(&self.slope * x + &self.offset)
    }
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("affine map input", self.input_dim(), x.len())?;
        Ok(self.slope.clone())
    }
    fn name(&self) -> &str {
        "affine"
    }
}

/// Picks `(pˣ, pʸ)` out of the coordinated-turn state `[pˣ, vˣ, pʸ, vʸ, ω]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionMeasurement {
    inner: AffineMap,
}

impl PositionMeasurement {
    pub fn new() -> Self {
        let mut slope = DMatrix::zeros(2, 5);
        slope[(0, 0)] = 1.0;
        slope[(1, 2)] = 1.0;
        Self {
            inner: AffineMap {
                slope,
                offset: DVector::zeros(2),
            },
        }
    }
}

impl Default for PositionMeasurement {
    fn default() -> Self {
        Self::new()
    }
}

impl DifferentiableMap for PositionMeasurement {
    fn input_dim(&self) -> usize {
        5
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.eval(x)
    }
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.inner.jacobian(x)
    }
    fn name(&self) -> &str {
        "position"
    }
}
