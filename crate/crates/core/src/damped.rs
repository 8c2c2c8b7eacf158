//! Line-searched dynamically iterated filtering.
//!
//! The undamped iteration is a Gauss-Newton method on the joint MAP loss over
//! `(x_{k−1}, x_k)`:
//!
//! ```text
//! L(a, b) = ½‖a − m‖²_P + ½‖y − h(b)‖²_{R+Ω_h} + ½‖b − f(a)‖²_{Q+Ω_f}
//! ```
//!
//! The smoother pass linearized at the current iterate `s` proposes `ξ`, and
//! the damped filter only moves a fraction `α` of the way along `ξ − s`,
//! chosen by backtracking so the loss decreases.

use nalgebra::{DMatrix, DVector};

use crate::dif::{IterationConfig, LagOneBelief, StepTrace, Variant, KL_BLOWUP};
use crate::error::{check_dim, FilterError, Result};
use crate::gaussian::{cholesky, condition_estimate, kl_divergence, GaussianDensity};
use crate::linearization::{AffineApproximation, Linearization};
use crate::models::StateSpaceModel;
use crate::smoother::{smoother_pass, time_update, SmootherPass};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    /// Backtracking factor in (0, 1).
    pub shrink: f64,
    /// Steps shorter than this are rejected.
    pub alpha_min: f64,
    /// Sufficient-decrease constant.
    pub armijo_c: f64,
    /// With `false`, any decrease of the loss is accepted.
    pub armijo: bool,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            shrink: 0.5,
            alpha_min: 1e-4,
            armijo_c: 1e-4,
            armijo: true,
        }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(FilterError::InvalidConfig(format!(
                "line search shrink must lie in (0, 1), got {}",
                self.shrink
            )));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= 1.0) {
            return Err(FilterError::InvalidConfig(format!(
                "alpha_min must lie in (0, 1], got {}",
                self.alpha_min
            )));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(FilterError::InvalidConfig(format!(
                "armijo_c must lie in (0, 1), got {}",
                self.armijo_c
            )));
        }
        Ok(())
    }
}

/// A point `(x_{k−1}, x_k)` of the joint loss.
#[derive(Debug, Clone, PartialEq)]
pub struct JointIterate {
    pub prev: DVector<f64>,
    pub curr: DVector<f64>,
}

impl JointIterate {
    pub fn new(prev: DVector<f64>, curr: DVector<f64>) -> Result<Self> {
        check_dim("joint iterate", prev.len(), curr.len())?;
        Ok(Self { prev, curr })
    }

    pub fn dim(&self) -> usize {
        self.prev.len()
    }

    pub fn stacked(&self) -> DVector<f64> {
        let n = self.dim();
        let mut v = DVector::zeros(2 * n);
        v.rows_mut(0, n).copy_from(&self.prev);
        v.rows_mut(n, n).copy_from(&self.curr);
        v
    }

    pub fn from_stacked(v: &DVector<f64>) -> Result<Self> {
        if !v.len().is_multiple_of(2) || v.is_empty() {
            return Err(FilterError::Precondition(format!(
                "stacked joint iterate needs an even positive length, got {}",
                v.len()
            )));
        }
        let n = v.len() / 2;
        Ok(Self {
            prev: v.rows(0, n).into_owned(),
            curr: v.rows(n, n).into_owned(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.prev.iter().chain(self.curr.iter()).all(|x| x.is_finite())
    }

    fn step(&self, p: &DVector<f64>, alpha: f64) -> Self {
        let n = self.dim();
        Self {
            prev: &self.prev + p.rows(0, n) * alpha,
            curr: &self.curr + p.rows(n, n) * alpha,
        }
    }
}

/// Covariances weighting the three loss terms, with cached lower Cholesky
/// factors.
#[derive(Debug, Clone)]
pub struct LossWeights {
    prior: DMatrix<f64>,
    measurement: DMatrix<f64>,
    transition: DMatrix<f64>,
    l_prior: DMatrix<f64>,
    l_measurement: DMatrix<f64>,
    l_transition: DMatrix<f64>,
}

impl LossWeights {
    pub fn new(prior: DMatrix<f64>, measurement: DMatrix<f64>, transition: DMatrix<f64>) -> Result<Self> {
        check_dim("loss weight prior", prior.nrows(), transition.nrows())?;
        let l_prior = cholesky(&prior, "prior loss weight")?.l();
        let l_measurement = cholesky(&measurement, "measurement loss weight")?.l();
        let l_transition = cholesky(&transition, "transition loss weight")?.l();
        Ok(Self {
            prior,
            measurement,
            transition,
            l_prior,
            l_measurement,
            l_transition,
        })
    }

    /// `(P, R + Ω_h, Q + Ω_f)` for the given linearizations.
    pub fn from_linearization(
        prior_prev: &GaussianDensity,
        model: &StateSpaceModel,
        f_aff: &AffineApproximation,
        h_aff: &AffineApproximation,
    ) -> Result<Self> {
        Self::new(
            prior_prev.cov().clone(),
            model.r() + h_aff.omega(),
            model.q() + f_aff.omega(),
        )
    }

    pub fn prior(&self) -> &DMatrix<f64> {
        &self.prior
    }

    pub fn measurement(&self) -> &DMatrix<f64> {
        &self.measurement
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }
}

fn is_blowup(e: &FilterError) -> bool {
    e.is_divergence() || matches!(e, FilterError::NonFinite { .. })
}

fn whiten(l: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(v).expect("Cholesky factor has a positive diagonal")
}

fn whiten_mat(l: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(m).expect("Cholesky factor has a positive diagonal")
}

fn check_problem(it: &JointIterate, y: &DVector<f64>, prior: &GaussianDensity, model: &StateSpaceModel) -> Result<()> {
    check_dim("joint iterate", model.state_dim(), it.dim())?;
    check_dim("prior dimension", model.state_dim(), prior.dim())?;
    check_dim("measurement dimension", model.measurement_dim(), y.len())
}

/// Whitened residual `[L_P⁻¹(a − m); L_R⁻¹(y − h(b)); L_Q⁻¹(b − f(a))]`.
pub fn gn_residual(
    it: &JointIterate,
    y: &DVector<f64>,
    prior: &GaussianDensity,
    model: &StateSpaceModel,
    w: &LossWeights,
) -> Result<DVector<f64>> {
    check_problem(it, y, prior, model)?;
    let n = it.dim();
    let m = y.len();
    let r0 = whiten(&w.l_prior, &(&it.prev - prior.mean()));
    let r1 = whiten(&w.l_measurement, &(y - model.measurement().eval(&it.curr)?));
    let r2 = whiten(&w.l_transition, &(&it.curr - model.transition().eval(&it.prev)?));
    let mut r = DVector::zeros(2 * n + m);
    r.rows_mut(0, n).copy_from(&r0);
    r.rows_mut(n, m).copy_from(&r1);
    r.rows_mut(n + m, n).copy_from(&r2);
    Ok(r)
}

/// Jacobian of [`gn_residual`] with respect to the stacked iterate.
pub fn gn_jacobian(
    it: &JointIterate,
    y: &DVector<f64>,
    prior: &GaussianDensity,
    model: &StateSpaceModel,
    w: &LossWeights,
) -> Result<DMatrix<f64>> {
    check_problem(it, y, prior, model)?;
    let n = it.dim();
    let m = y.len();
    let h_jac = model.measurement().jacobian(&it.curr)?;
    let f_jac = model.transition().jacobian(&it.prev)?;
    let mut j = DMatrix::zeros(2 * n + m, 2 * n);
    j.view_mut((0, 0), (n, n))
        .copy_from(&whiten_mat(&w.l_prior, &DMatrix::identity(n, n)));
    j.view_mut((n, n), (m, n)).copy_from(&-whiten_mat(&w.l_measurement, &h_jac));
    j.view_mut((n + m, 0), (n, n)).copy_from(&-whiten_mat(&w.l_transition, &f_jac));
    j.view_mut((n + m, n), (n, n))
        .copy_from(&whiten_mat(&w.l_transition, &DMatrix::identity(n, n)));
    Ok(j)
}

pub fn evaluate_loss(
    it: &JointIterate,
    y: &DVector<f64>,
    prior: &GaussianDensity,
    model: &StateSpaceModel,
    w: &LossWeights,
) -> Result<f64> {
    let r = gn_residual(it, y, prior, model, w)?;
    let loss = 0.5 * r.norm_squared();
    if !loss.is_finite() {
        return Err(FilterError::NonFinite {
            context: "joint loss".into(),
        });
    }
    Ok(loss)
}

/// `∇L = Jᵀ r`
pub fn loss_gradient(
    it: &JointIterate,
    y: &DVector<f64>,
    prior: &GaussianDensity,
    model: &StateSpaceModel,
    w: &LossWeights,
) -> Result<DVector<f64>> {
    let r = gn_residual(it, y, prior, model, w)?;
    let j = gn_jacobian(it, y, prior, model, w)?;
    Ok(j.transpose() * r)
}

/// Gauss-Newton step `−(JᵀJ)⁻¹ Jᵀ r` in stacked coordinates.
pub fn gn_step(
    it: &JointIterate,
    y: &DVector<f64>,
    prior: &GaussianDensity,
    model: &StateSpaceModel,
    w: &LossWeights,
) -> Result<DVector<f64>> {
    let r = gn_residual(it, y, prior, model, w)?;
    let j = gn_jacobian(it, y, prior, model, w)?;
    let jt = j.transpose();
    let normal = &jt * &j;
    let ch = normal.clone().cholesky().ok_or(FilterError::NotPositiveDefinite {
        what: "Gauss-Newton normal matrix",
        condition: condition_estimate(&normal),
    })?;
    Ok(-ch.solve(&(jt * r)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    /// Accepted step length; `0` when the step was rejected.
    pub alpha: f64,
    pub iterate: JointIterate,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Backtracking search along `p` (stacked coordinates) from `it`.
pub fn line_search(
    it: &JointIterate,
    p: &DVector<f64>,
    y: &DVector<f64>,
    prior: &GaussianDensity,
    model: &StateSpaceModel,
    w: &LossWeights,
    cfg: &LineSearchConfig,
) -> Result<LineSearchOutcome> {
    cfg.validate()?;
    check_dim("search direction", 2 * it.dim(), p.len())?;
    let loss0 = evaluate_loss(it, y, prior, model, w)?;
    let scale = it.stacked().amax().max(1.0);
    if p.amax() <= 1e-14 * scale {
        return Ok(LineSearchOutcome {
            alpha: 1.0,
            iterate: it.step(p, 1.0),
            loss_before: loss0,
            loss_after: loss0,
        });
    }
    let slope = if cfg.armijo {
        loss_gradient(it, y, prior, model, w)?.dot(p).min(0.0)
    } else {
        0.0
    };
    // Rounding slack on the loss comparison.
    let slack = 1e-12 * loss0.abs();
    let mut alpha = 1.0;
    while alpha >= cfg.alpha_min {
        let trial = it.step(p, alpha);
        // Trial points outside the model domain simply fail the test.
        if let Ok(loss) = evaluate_loss(&trial, y, prior, model, w) {
            let target = if cfg.armijo {
                loss0 + cfg.armijo_c * alpha * slope
            } else {
                loss0
            };
            let accept = if cfg.armijo { loss <= target + slack } else { loss < loss0 };
            if accept {
                return Ok(LineSearchOutcome {
                    alpha,
                    iterate: trial,
                    loss_before: loss0,
                    loss_after: loss,
                });
            }
        }
        alpha *= cfg.shrink;
    }
    Ok(LineSearchOutcome {
        alpha: 0.0,
        iterate: it.clone(),
        loss_before: loss0,
        loss_after: loss0,
    })
}

/// Covariances the statistical linearizations are taken with; ignored by the
/// analytical method.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenCovariances {
    pub transition: DMatrix<f64>,
    pub measurement: DMatrix<f64>,
}

/// Smoother pass linearized at `it`; returns the proposal `ξ` together with
/// the pass and the approximations used.
pub fn smoother_proposal(
    it: &JointIterate,
    y: &DVector<f64>,
    prior: &GaussianDensity,
    model: &StateSpaceModel,
    lin: &Linearization,
    frozen: &FrozenCovariances,
) -> Result<(JointIterate, SmootherPass, AffineApproximation, AffineApproximation, GaussianDensity, GaussianDensity)> {
    check_problem(it, y, prior, model)?;
    let f_point = GaussianDensity::from_repaired(it.prev.clone(), frozen.transition.clone())?;
    let h_point = GaussianDensity::from_repaired(it.curr.clone(), frozen.measurement.clone())?;
    let f_aff = lin.linearize(model.transition(), &f_point)?;
    let h_aff = lin.linearize(model.measurement(), &h_point)?;
    let pass = smoother_pass(prior, y, &f_aff, &h_aff, model.q(), model.r())?;
    let xi = JointIterate::new(pass.smoothed_prev.mean().clone(), pass.posterior.mean().clone())?;
    Ok((xi, pass, f_aff, h_aff, f_point, h_point))
}

/// Diagnostics of a damped step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DampedTrace {
    pub base: StepTrace,
    /// Starting point followed by every accepted iterate.
    pub joint_iterates: Vec<JointIterate>,
    pub alphas: Vec<f64>,
    pub loss_before: Vec<f64>,
    pub loss_after: Vec<f64>,
    pub outer_iterations: usize,
}

struct InnerResult {
    s: JointIterate,
    belief: LagOneBelief,
}

fn belief_at(
    prior: &GaussianDensity,
    pass: &SmootherPass,
    s: &JointIterate,
) -> Result<LagOneBelief> {
    Ok(LagOneBelief {
        prior_prev: prior.clone(),
        predictive: pass.predictive.clone(),
        posterior: pass.posterior.with_mean(s.curr.clone())?,
        smoothed_prev: pass.smoothed_prev.with_mean(s.prev.clone())?,
    })
}

#[allow(clippy::too_many_arguments)]
fn inner_loop(
    prior: &GaussianDensity,
    y: &DVector<f64>,
    model: &StateSpaceModel,
    cfg: &IterationConfig,
    ls: &LineSearchConfig,
    lin: &Linearization,
    frozen: &FrozenCovariances,
    start: JointIterate,
    trace: &mut DampedTrace,
) -> Result<InnerResult> {
    let mut s = start;
    let mut last_post: Option<GaussianDensity> = None;
    for i in 0..cfg.max_iters {
        let proposal = smoother_proposal(&s, y, prior, model, lin, frozen);
        let (xi, pass, f_aff, h_aff, f_point, h_point) = match proposal {
            Ok(v) => v,
            Err(e) if i > 0 && is_blowup(&e) => {
                trace.base.diverged_at = Some(i);
                break;
            }
            Err(e) => return Err(e.at_iteration(i)),
        };
        // Fixed point: the undamped proposal no longer moves the posterior.
        if let Some(prev) = &last_post {
            let kl = kl_divergence(prev, &pass.posterior)?;
            if !kl.is_finite() || kl > KL_BLOWUP {
                trace.base.diverged_at = Some(i);
                break;
            }
            if kl < cfg.gamma {
                trace.base.converged_at = Some(trace.base.iterates.len());
                break;
            }
        }
        let searched = (|| {
            let w = LossWeights::from_linearization(prior, model, &f_aff, &h_aff)?;
            let p = xi.stacked() - s.stacked();
            let mut out = line_search(&s, &p, y, prior, model, &w, ls)?;
            if out.alpha == 0.0 && trace.alphas.is_empty() {
                // The first proposal is the non-iterated filter; take it even
                // when the search fails so the measurement is never ignored.
                out.alpha = 1.0;
                out.loss_after = evaluate_loss(&xi, y, prior, model, &w).unwrap_or(f64::INFINITY);
                out.iterate = xi;
            }
            Ok::<_, FilterError>(out)
        })();
        let out = match searched {
            Ok(v) => v,
            Err(e) if i > 0 && is_blowup(&e) => {
                trace.base.diverged_at = Some(i);
                break;
            }
            Err(e) => return Err(e.at_iteration(i)),
        };
        trace.alphas.push(out.alpha);
        trace.loss_before.push(out.loss_before);
        trace.loss_after.push(out.loss_after);
        if out.alpha == 0.0 {
            break;
        }
        if !out.iterate.is_finite() {
            trace.base.diverged_at = Some(i);
            break;
        }
        s = out.iterate;
        trace.joint_iterates.push(s.clone());
        let belief = belief_at(prior, &pass, &s)?;
        trace.base.iterates.push(belief.clone());
        trace.base.transition_approx.push(f_aff);
        trace.base.measurement_approx.push(h_aff);
        trace.base.linearization_points.push((f_point, h_point));
        last_post = Some(belief.posterior);
    }
    // Covariances from a final pass at the accepted iterate.
    let (_, pass, ..) = smoother_proposal(&s, y, prior, model, lin, frozen).map_err(|e| e.at_iteration(cfg.max_iters))?;
    let belief = belief_at(prior, &pass, &s)?;
    Ok(InnerResult { s, belief })
}

/// One damped step. DIEKF linearizes analytically at the iterate, DIUKF uses
/// the prior and iteration-0 predictive covariances throughout, and DIPLF
/// refreshes those covariances from the smoothed and posterior densities in
/// an outer loop.
pub fn damped_dif_step(
    prior_prev: &GaussianDensity,
    y: &DVector<f64>,
    model: &StateSpaceModel,
    cfg: &IterationConfig,
    ls: &LineSearchConfig,
) -> Result<(LagOneBelief, DampedTrace)> {
    cfg.validate()?;
    ls.validate()?;
    check_dim("prior dimension", model.state_dim(), prior_prev.dim())?;
    check_dim("measurement dimension", model.measurement_dim(), y.len())?;
    if !cfg.variant.is_dynamic() {
        return Err(FilterError::InvalidConfig(format!(
            "line search applies to the dynamically iterated variants, not {}",
            cfg.variant
        )));
    }
    let lin = cfg.linearization();
    let f_aff0 = lin
        .linearize(model.transition(), prior_prev)
        .map_err(|e| e.at_iteration(0))?;
    let pred0 = time_update(prior_prev, &f_aff0, model.q()).map_err(|e| e.at_iteration(0))?;
    let start = JointIterate::new(prior_prev.mean().clone(), pred0.mean().clone())?;
    let mut frozen = FrozenCovariances {
        transition: prior_prev.cov().clone(),
        measurement: pred0.cov().clone(),
    };
    let mut trace = DampedTrace {
        joint_iterates: vec![start.clone()],
        ..DampedTrace::default()
    };
    let outer_max = if cfg.variant == Variant::Diplf { cfg.outer_max_iters } else { 1 };
    let mut s = start;
    let mut result: Option<LagOneBelief> = None;
    for _ in 0..outer_max {
        trace.outer_iterations += 1;
        let inner = inner_loop(prior_prev, y, model, cfg, ls, &lin, &frozen, s, &mut trace)?;
        s = inner.s;
        let done = match &result {
            Some(prev) => kl_divergence(&prev.posterior, &inner.belief.posterior)? < cfg.gamma,
            None => false,
        };
        frozen = FrozenCovariances {
            transition: inner.belief.smoothed_prev.cov().clone(),
            measurement: inner.belief.posterior.cov().clone(),
        };
        result = Some(inner.belief);
        if done || trace.base.diverged_at.is_some() {
            break;
        }
    }
    let belief = result.expect("at least one outer iteration");
    if !belief.posterior.mean().iter().all(|x| x.is_finite()) {
        return Err(FilterError::DivergenceDetected {
            time_index: None,
            iteration: trace.base.iterates.len(),
        });
    }
    Ok((belief, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dif::dif_step;
    use crate::models::{make_illustration_model, make_trig_model, AffineMap};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn scalar(m: f64, v: f64) -> GaussianDensity {
        GaussianDensity::scalar(m, v).unwrap()
    }

    fn y1(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn trig_weights(prior: &GaussianDensity) -> LossWeights {
        let model = make_trig_model();
        LossWeights::new(prior.cov().clone(), model.r().clone(), model.q().clone()).unwrap()
    }

    #[test]
    fn joint_iterate_stacking() {
        let it = JointIterate::new(DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(it.stacked().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(JointIterate::from_stacked(&it.stacked()).unwrap(), it);
        assert!(JointIterate::from_stacked(&DVector::zeros(3)).is_err());
        assert!(JointIterate::new(DVector::zeros(1), DVector::zeros(2)).is_err());
    }

    #[test]
    fn loss_of_hand_computed_point() {
        let model = make_trig_model();
        let prior = scalar(-2.9, 1.0);
        let w = trig_weights(&prior);
        let (a, b) = (-3.0_f64, -2.5_f64);
        let it = JointIterate::new(y1(a), y1(b)).unwrap();
        let y = 0.4;
        let fa = a.cos() * a.sin() * a * a;
        let expected = 0.5 * ((a + 2.9).powi(2) / 1.0 + (y - b.atan()).powi(2) / 1.0 + (b - fa).powi(2) / 0.1);
        let loss = evaluate_loss(&it, &y1(y), &prior, &model, &w).unwrap();
        assert_abs_diff_eq!(loss, expected, epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = make_trig_model();
        let prior = scalar(-2.9, 1.0);
        let w = trig_weights(&prior);
        let y = y1(0.3);
        for &(a, b) in &[(-3.0, -2.0), (-1.0, 0.5), (0.7, -4.0)] {
            let it = JointIterate::new(y1(a), y1(b)).unwrap();
            let g = loss_gradient(&it, &y, &prior, &model, &w).unwrap();
            let h = 1e-6;
            for k in 0..2 {
                let mut e = DVector::zeros(2);
                e[k] = h;
                let lp = evaluate_loss(&it.step(&e, 1.0), &y, &prior, &model, &w).unwrap();
                let lm = evaluate_loss(&it.step(&e, -1.0), &y, &prior, &model, &w).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                assert!((g[k] - fd).abs() <= 1e-5 * (1.0 + fd.abs()), "{k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn smoother_proposal_is_the_gauss_newton_step() {
        let model = make_trig_model();
        let prior = scalar(-2.9, 1.0);
        let y = y1(0.3);
        let frozen = FrozenCovariances {
            transition: prior.cov().clone(),
            measurement: prior.cov().clone(),
        };
        for &(a, b) in &[(-2.9, -2.5), (-1.0, 0.5), (0.7, -4.0), (-3.3, -3.1)] {
            let it = JointIterate::new(y1(a), y1(b)).unwrap();
            let (xi, ..) = smoother_proposal(&it, &y, &prior, &model, &Linearization::Analytical, &frozen).unwrap();
            let w = trig_weights(&prior);
            let p = gn_step(&it, &y, &prior, &model, &w).unwrap();
            let diff = (xi.stacked() - it.stacked()) - &p;
            assert!(diff.norm() <= 1e-6 * p.norm() + 1e-12, "{diff} vs {p}");
        }
    }

    #[test]
    fn line_search_rejects_ascent_direction() {
        let model = make_trig_model();
        let prior = scalar(-2.9, 1.0);
        let w = trig_weights(&prior);
        let y = y1(0.3);
        let it = JointIterate::new(y1(-2.9), y1(-2.0)).unwrap();
        // Short enough that the loss grows along the whole segment.
        let g = loss_gradient(&it, &y, &prior, &model, &w).unwrap() * 1e-3;
        let out = line_search(&it, &g, &y, &prior, &model, &w, &LineSearchConfig::default()).unwrap();
        assert_eq!(out.alpha, 0.0);
        assert_eq!(out.iterate, it);
        let out = line_search(&it, &(-&g), &y, &prior, &model, &w, &LineSearchConfig::default()).unwrap();
        assert!(out.alpha > 0.0);
        assert!(out.loss_after < out.loss_before);
    }

    #[test]
    fn line_search_zero_direction_keeps_iterate() {
        let model = make_trig_model();
        let prior = scalar(-2.9, 1.0);
        let w = trig_weights(&prior);
        let it = JointIterate::new(y1(-2.9), y1(-2.0)).unwrap();
        let out = line_search(&it, &DVector::zeros(2), &y1(0.0), &prior, &model, &w, &LineSearchConfig::default())
            .unwrap();
        assert_eq!(out.iterate, it);
        assert_eq!(out.loss_before, out.loss_after);
    }

    #[test]
    fn invalid_line_search_config() {
        let bad = LineSearchConfig {
            shrink: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = LineSearchConfig {
            alpha_min: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn affine_model_matches_undamped() {
        let f = AffineMap::new(DMatrix::from_element(1, 1, 0.9), y1(0.2)).unwrap();
        let h = AffineMap::new(DMatrix::from_element(1, 1, 1.5), y1(-0.1)).unwrap();
        let model = StateSpaceModel::new(
            Arc::new(f),
            Arc::new(h),
            DMatrix::from_element(1, 1, 0.3),
            DMatrix::from_element(1, 1, 0.5),
        )
        .unwrap();
        let prior = scalar(0.4, 2.0);
        for v in [Variant::Diekf, Variant::Diukf, Variant::Diplf] {
            let (damped, trace) =
                damped_dif_step(&prior, &y1(1.3), &model, &IterationConfig::damped(v), &LineSearchConfig::default())
                    .unwrap();
            let (plain, _) = dif_step(&prior, &y1(1.3), &model, &IterationConfig::new(v)).unwrap();
            assert!(trace.alphas.iter().all(|&a| a == 1.0), "{v}: {:?}", trace.alphas);
            assert_abs_diff_eq!(damped.posterior.mean()[0], plain.posterior.mean()[0], epsilon = 1e-10);
            assert_abs_diff_eq!(damped.posterior.cov()[(0, 0)], plain.posterior.cov()[(0, 0)], epsilon = 1e-10);
            assert_abs_diff_eq!(damped.smoothed_prev.mean()[0], plain.smoothed_prev.mean()[0], epsilon = 1e-10);
        }
    }

    #[test]
    fn rejects_non_dynamic_variant() {
        let model = make_illustration_model();
        let err = damped_dif_step(
            &scalar(3.0, 4.0),
            &y1(1.0),
            &model,
            &IterationConfig::damped(Variant::Iekf),
            &LineSearchConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, FilterError::InvalidConfig(_)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn damped_loss_is_monotone(m in -4.0f64..2.0, v in 0.2f64..3.0, y in -1.5f64..1.5) {
            let model = make_trig_model();
            let prior = scalar(m, v);
            for variant in [Variant::Diekf, Variant::Diukf] {
                let cfg = IterationConfig::damped(variant);
                let (_, trace) = damped_dif_step(&prior, &y1(y), &model, &cfg, &LineSearchConfig::default()).unwrap();
                // The first step may be forced; later ones must not increase the loss.
                for k in 1..trace.alphas.len() {
                    let (b, a) = (trace.loss_before[k], trace.loss_after[k]);
                    prop_assert!(a <= b + 1e-12 * b.abs().max(1.0), "{variant}: {a} > {b}");
                    prop_assert!((0.0..=1.0).contains(&trace.alphas[k]));
                }
            }
        }
    }
}
