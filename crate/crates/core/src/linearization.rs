//! Affine approximations `g(x) ≈ A x + b + η`, `η ~ N(0, Ω)`, from either a
//! first-order Taylor expansion or statistical linearization with the
//! unscented transform.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, FilterError, Result};
use crate::gaussian::{psd_sqrt, repair_psd, GaussianDensity};
use crate::models::DifferentiableMap;

/// The `(A, b, Ω)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineApproximation {
    slope: DMatrix<f64>,
    offset: DVector<f64>,
    omega: DMatrix<f64>,
}

impl AffineApproximation {
    pub fn new(slope: DMatrix<f64>, offset: DVector<f64>, omega: DMatrix<f64>) -> Result<Self> {
        let m = slope.nrows();
        check_dim("affine offset", m, offset.len())?;
        check_dim("linearization error rows", m, omega.nrows())?;
        check_dim("linearization error columns", m, omega.ncols())?;
        Ok(Self {
            slope,
            offset,
            omega: repair_psd(&omega),
        })
    }

    /// An exact affine map, `Ω = 0`.
    pub fn exact(slope: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        check_dim("affine offset", slope.nrows(), offset.len())?;
        let m = slope.nrows();
        Ok(Self {
            slope,
            offset,
            omega: DMatrix::zeros(m, m),
        })
    }

    pub fn slope(&self) -> &DMatrix<f64> {
        &self.slope
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn input_dim(&self) -> usize {
        self.slope.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.slope.nrows()
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.slope * x + &self.offset
    }
}

/// Moments `z̄ = E[g]`, `Ψ = Cov(x, g)`, `Φ = Cov(g)` under a Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct SlMoments {
    pub z_bar: DVector<f64>,
    pub psi: DMatrix<f64>,
    pub phi: DMatrix<f64>,
}

/// How `κ` is chosen for an `n`-dimensional state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaRule {
    /// `κ = 3 − n`, matching the fourth moment of a scalar Gaussian.
    Classical,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnscentedConfig {
    pub kappa: KappaRule,
}

impl Default for UnscentedConfig {
    fn default() -> Self {
        Self {
            kappa: KappaRule::Classical,
        }
    }
}

/// Sigma-point weights for one state dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnscentedWeights {
    pub center: f64,
    pub outer: f64,
    /// `√(n + κ)`, the spread applied to the square-root columns.
    pub spread: f64,
}

impl UnscentedConfig {
    pub fn kappa(&self, n: usize) -> f64 {
        match self.kappa {
            KappaRule::Classical => 3.0 - n as f64,
            KappaRule::Fixed(k) => k,
        }
    }

    pub fn weights(&self, n: usize) -> Result<UnscentedWeights> {
        let lambda = n as f64 + self.kappa(n);
        if !(lambda > 0.0) {
            return Err(FilterError::InvalidConfig(format!(
                "unscented transform needs n + kappa > 0, got {lambda}"
            )));
        }
        let outer = 0.5 / lambda;
        Ok(UnscentedWeights {
            center: 1.0 - 2.0 * n as f64 * outer,
            outer,
            spread: lambda.sqrt(),
        })
    }

    /// The `2n + 1` sigma points `x̂`, `x̂ ± √(n+κ) Lᵢ` with `L Lᵀ = P`.
    pub fn sigma_points(&self, density: &GaussianDensity) -> Result<Vec<DVector<f64>>> {
        let n = density.dim();
        let w = self.weights(n)?;
        let root = psd_sqrt(density.cov()) * w.spread;
        let mean = density.mean();
        let mut points = Vec::with_capacity(2 * n + 1);
        points.push(mean.clone());
        for i in 0..n {
            points.push(mean + root.column(i));
        }
        for i in 0..n {
            points.push(mean - root.column(i));
        }
        Ok(points)
    }
}

/// Unscented-transform estimate of the statistical-linearization moments.
pub fn sl_moments_unscented(
    g: &dyn DifferentiableMap,
    density: &GaussianDensity,
    cfg: &UnscentedConfig,
) -> Result<SlMoments> {
    let n = density.dim();
    check_dim("statistical linearization input", g.input_dim(), n)?;
    let w = cfg.weights(n)?;
    let points = cfg.sigma_points(density)?;
    let weight = |i: usize| if i == 0 { w.center } else { w.outer };

    let mut images = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let z = g.eval(p).map_err(|e| FilterError::ModelDomain {
            reason: format!("sigma point {i}: {e}"),
        })?;
        if !z.iter().all(|v| v.is_finite()) {
            return Err(FilterError::NonFinite {
                context: format!("image of sigma point {i}"),
            });
        }
        images.push(z);
    }

    let m = g.output_dim();
    let mut z_bar = DVector::zeros(m);
    for (i, z) in images.iter().enumerate() {
        z_bar += z * weight(i);
    }
    let mut psi = DMatrix::zeros(n, m);
    let mut phi = DMatrix::zeros(m, m);
    for (i, (p, z)) in points.iter().zip(&images).enumerate() {
        let dx = p - density.mean();
        let dz = z - &z_bar;
        psi += &dx * dz.transpose() * weight(i);
        phi += &dz * dz.transpose() * weight(i);
    }
    Ok(SlMoments { z_bar, psi, phi })
}

/// Taylor linearization about `x_bar`: `A = J(x̄)`, `b = g(x̄) − A x̄`, `Ω = 0`.
pub fn linearize_analytical(g: &dyn DifferentiableMap, x_bar: &DVector<f64>) -> Result<AffineApproximation> {
    let value = g.eval(x_bar)?;
    let jac = g.jacobian(x_bar)?;
    if !jac.iter().all(|v| v.is_finite()) || !value.iter().all(|v| v.is_finite()) {
        return Err(FilterError::NonFinite {
            context: format!("analytical linearization of {}", g.name()),
        });
    }
    let offset = value - &jac * x_bar;
    AffineApproximation::exact(jac, offset)
}

/// Statistical linearization: `A = Ψᵀ P⁻¹`, `b = z̄ − A x̂`,
/// `Ω = repair(Φ − A P Aᵀ)`.
pub fn linearize_statistical(
    g: &dyn DifferentiableMap,
    density: &GaussianDensity,
    cfg: &UnscentedConfig,
) -> Result<AffineApproximation> {
    let moments = sl_moments_unscented(g, density, cfg)?;
    let p = density.cov();
    let n = density.dim();
    let ch = match p.clone().cholesky() {
        Some(ch) => ch,
        None => {
            let jitter = 1e-12 * p.trace() / n as f64;
            (p + DMatrix::identity(n, n) * jitter)
                .cholesky()
                .ok_or_else(|| FilterError::NotPositiveDefinite {
                    what: "linearization covariance",
                    condition: crate::gaussian::condition_estimate(p),
                })?
        }
    };
    let slope = ch.solve(&moments.psi).transpose();
    let offset = &moments.z_bar - &slope * density.mean();
    let omega = &moments.phi - &slope * p * slope.transpose();
    AffineApproximation::new(slope, offset, omega)
}

/// How a map is turned into an affine approximation about a density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Linearization {
    /// Taylor expansion at the density mean; the covariance is ignored.
    Analytical,
    Unscented(UnscentedConfig),
}

impl Linearization {
    pub fn linearize(&self, g: &dyn DifferentiableMap, about: &GaussianDensity) -> Result<AffineApproximation> {
        match self {
            Linearization::Analytical => linearize_analytical(g, about.mean()),
            Linearization::Unscented(cfg) => linearize_statistical(g, about, cfg),
        }
    }

    pub fn is_analytical(&self) -> bool {
        matches!(self, Linearization::Analytical)
    }
}
