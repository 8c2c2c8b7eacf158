use nalgebra::{DMatrix, DVector};

use super::DifferentiableMap;
use crate::error::{check_dim, Result};

fn scalar_in(x: &DVector<f64>) -> Result<f64> {
    check_dim("scalar map input", 1, x.len())?;
    Ok(x[0])
}

/// `g(x) = a x³`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cubic {
    pub a: f64,
}

impl Cubic {
    pub fn new(a: f64) -> Self {
        Self { a }
    }
}

impl DifferentiableMap for Cubic {
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let x = scalar_in(x)?;
        Ok(DVector::from_element(1, self.a * x * x * x))
    }
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let x = scalar_in(x)?;
        Ok(DMatrix::from_element(1, 1, 3.0 * self.a * x * x))
    }
    fn name(&self) -> &str {
        "cubic"
    }
}

/// `g(x) = cos(x) sin(x) x²`
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrigDynamics;

impl DifferentiableMap for TrigDynamics {
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let x = scalar_in(x)?;
        Ok(DVector::from_element(1, x.cos() * x.sin() * x * x))
    }
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let x = scalar_in(x)?;
        let (s2, c2) = (2.0 * x).sin_cos();
        Ok(DMatrix::from_element(1, 1, c2 * x * x + s2 * x))
    }
    fn name(&self) -> &str {
        "trig"
    }
}

/// `g(x) = arctan(x)`
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Arctan;

impl DifferentiableMap for Arctan {
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let x = scalar_in(x)?;
        Ok(DVector::from_element(1, x.atan()))
    }
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let x = scalar_in(x)?;
        Ok(DMatrix::from_element(1, 1, 1.0 / (1.0 + x * x)))
    }
    fn name(&self) -> &str {
        "arctan"
    }
}
