//! Multivariate Gaussian densities and the numerically safe primitives the
//! filters are built on: Cholesky-based quadratic forms, KL divergence and
//! PSD repair.
//!
//! Every covariance produced by this crate passes through [`symmetrize`] and,
//! where an arithmetic route can lose definiteness, through [`repair_psd`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, FilterError, Result};

/// Relative tolerance on the smallest eigenvalue accepted for user supplied
/// covariances before clamping.
pub const PSD_RELATIVE_TOLERANCE: f64 = 1e-10;

#[doc(hidden)]
pub mod fault {
    //! Mutation hook used by `verify` to check that the invariant suites
    //! catch a disabled symmetrization.
    use std::sync::atomic::{AtomicBool, Ordering};

    static SKIP_SYMMETRIZE: AtomicBool = AtomicBool::new(false);

    pub fn set_skip_symmetrize(on: bool) {
        SKIP_SYMMETRIZE.store(on, Ordering::Relaxed);
    }

    pub(crate) fn skip_symmetrize() -> bool {
        SKIP_SYMMETRIZE.load(Ordering::Relaxed)
    }
}

/// Returns ½(M + Mᵀ). The result is exactly symmetric.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    if fault::skip_symmetrize() {
        return m.clone();
    }
    let n = m.nrows();
    let mut out = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Symmetrizes `m` and clamps negative eigenvalues to zero.
///
/// Inputs that are already PSD come back unchanged up to symmetrization.
/// Total: never fails, though non-finite input yields non-finite output.
pub fn repair_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(m.is_square(), "repair_psd needs a square matrix");
    let sym = symmetrize(m);
    if sym.nrows() == 0 || !sym.iter().all(|v| v.is_finite()) {
        return sym;
    }
    if sym.clone().cholesky().is_some() {
        return sym;
    }
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let rebuilt = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    symmetrize(&rebuilt)
}

/// Ratio of the largest to the smallest absolute eigenvalue of the
/// symmetric part of `m`; infinite when singular.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || !m.iter().all(|v| v.is_finite()) {
        return f64::INFINITY;
    }
    let eig = symmetrize(m).symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &l| a.min(l));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Cholesky factorization that reports which matrix failed.
pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(FilterError::NonFinite {
            context: what.to_string(),
        });
    }
    m.clone()
        .cholesky()
        .ok_or_else(|| FilterError::NotPositiveDefinite {
            what,
            condition: condition_estimate(m),
        })
}

/// A symmetric square root `L` with `L Lᵀ = M` for PSD `M`: the Cholesky
/// factor when it exists, otherwise `V √Λ₊` from the eigendecomposition.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if let Some(ch) = sym.clone().cholesky() {
        return ch.l();
    }
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// A Gaussian density `N(mean, cov)` with an exactly symmetric PSD covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianDensity {
    /// Validates and stores a density. The covariance is symmetrized; an
    /// eigenvalue below `-1e-10 · λ_max` is rejected, smaller negative
    /// eigenvalues are clamped to zero.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(FilterError::Precondition(
                "a density needs dimension at least 1".into(),
            ));
        }
        check_dim("covariance rows", n, cov.nrows())?;
        check_dim("covariance columns", n, cov.ncols())?;
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(FilterError::NonFinite {
                context: "density mean".into(),
            });
        }
        if !cov.iter().all(|v| v.is_finite()) {
            return Err(FilterError::NonFinite {
                context: "density covariance".into(),
            });
        }
        let sym = symmetrize(&cov);
        if sym.clone().cholesky().is_some() {
            return Ok(Self { mean, cov: sym });
        }
        let eig = sym.clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min < -PSD_RELATIVE_TOLERANCE * max.abs().max(f64::MIN_POSITIVE) {
            return Err(FilterError::NotPositiveSemiDefinite {
                what: "density covariance",
                min_eigenvalue: min,
                max_eigenvalue: max,
            });
        }
        Ok(Self {
            mean,
            cov: repair_psd(&sym),
        })
    }

    /// Builds a density from an internally computed covariance, repairing it
    /// to PSD unconditionally. Only non-finite entries are rejected.
    pub(crate) fn from_repaired(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !mean.iter().all(|v| v.is_finite()) || !cov.iter().all(|v| v.is_finite()) {
            return Err(FilterError::DivergenceDetected {
                time_index: None,
                iteration: 0,
            });
        }
        Ok(Self {
            mean,
            cov: repair_psd(&cov),
        })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Same covariance, different mean.
    pub fn with_mean(&self, mean: DVector<f64>) -> Result<Self> {
        check_dim("density mean", self.dim(), mean.len())?;
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(FilterError::DivergenceDetected {
                time_index: None,
                iteration: 0,
            });
        }
        Ok(Self {
            mean,
            cov: self.cov.clone(),
        })
    }

    /// Log of the density at `x`.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("log_pdf point", self.dim(), x.len())?;
        let ch = cholesky(&self.cov, "density covariance")?;
        let diff = x - &self.mean;
        let z = ch.l().solve_lower_triangular(&diff).expect("cholesky factor");
        let log_det: f64 = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let n = self.dim() as f64;
        Ok(-0.5 * (z.norm_squared() + log_det + n * (2.0 * std::f64::consts::PI).ln()))
    }
}

/// A squared Mahalanobis norm `vᵀ S⁻¹ v`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct WeightedNorm(f64);

impl WeightedNorm {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `vᵀ S⁻¹ v` through a Cholesky factor of `S`.
pub fn weighted_norm_sq(v: &DVector<f64>, s: &DMatrix<f64>) -> Result<WeightedNorm> {
    check_dim("weighted norm", s.nrows(), v.len())?;
    let ch = cholesky(s, "norm weight")?;
    let z = ch
        .l()
        .solve_lower_triangular(v)
        .expect("cholesky factor is invertible");
    Ok(WeightedNorm(z.norm_squared()))
}

fn log_det_psd(m: &DMatrix<f64>) -> f64 {
    if let Some(ch) = m.clone().cholesky() {
        return 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return f64::NEG_INFINITY;
    }
    eig.eigenvalues.iter().map(|l| l.ln()).sum()
}

/// `KL(p ‖ q)` between two Gaussians, clamped at zero. Infinite when `p` is
/// degenerate.
pub fn kl_divergence(p: &GaussianDensity, q: &GaussianDensity) -> Result<f64> {
    check_dim("kl_divergence", p.dim(), q.dim())?;
    let ch = cholesky(q.cov(), "KL reference covariance q")?;
    let l = ch.l();
    let n = p.dim() as f64;

    // tr(Σq⁻¹ Σp) = ‖L⁻¹ Lp‖²_F with Σp = Lp Lpᵀ
    let sp = psd_sqrt(p.cov());
    let w = l
        .solve_lower_triangular(&sp)
        .expect("cholesky factor is invertible");
    let trace = w.norm_squared();

    let diff = q.mean() - p.mean();
    let z = l
        .solve_lower_triangular(&diff)
        .expect("cholesky factor is invertible");
    let maha = z.norm_squared();

    let log_det_q = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_det_p = log_det_psd(p.cov());
    if log_det_p == f64::NEG_INFINITY {
        return Ok(f64::INFINITY);
    }
    // Nonnegative in exact arithmetic; cancellation can leave a few ulps below.
    Ok((0.5 * (trace + maha - n + log_det_q - log_det_p)).max(0.0))
}
