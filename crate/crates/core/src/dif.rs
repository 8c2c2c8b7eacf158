//! The dynamically iterated filter: per time step, iterate a time update,
//! measurement update and one-step smoothing, re-linearizing the transition
//! about the smoothed density and the measurement about the posterior until
//! successive posteriors agree in KL divergence.
//!
//! The classical filters are restrictions of the same loop: EKF/UKF stop after
//! the first pass, IEKF/IUKF/IPLF keep the first transition linearization and
//! only iterate the measurement one.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::damped::{self, LineSearchConfig};
use crate::error::{check_dim, FilterError, Result};
use crate::gaussian::{kl_divergence, GaussianDensity};
use crate::linearization::{AffineApproximation, Linearization, UnscentedConfig};
use crate::models::StateSpaceModel;
use crate::smoother::smoother_pass;

/// KL divergence between successive posteriors above which an iteration is
/// considered to have blown up.
pub const KL_BLOWUP: f64 = 1e12;

pub const DAMPED_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Ekf,
    Ukf,
    Iekf,
    Iukf,
    Iplf,
    Diekf,
    Diukf,
    Diplf,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Ekf,
        Variant::Ukf,
        Variant::Iekf,
        Variant::Iukf,
        Variant::Iplf,
        Variant::Diekf,
        Variant::Diukf,
        Variant::Diplf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ekf => "ekf",
            Variant::Ukf => "ukf",
            Variant::Iekf => "iekf",
            Variant::Iukf => "iukf",
            Variant::Iplf => "iplf",
            Variant::Diekf => "diekf",
            Variant::Diukf => "diukf",
            Variant::Diplf => "diplf",
        }
    }

    pub fn is_analytical(self) -> bool {
        matches!(self, Variant::Ekf | Variant::Iekf | Variant::Diekf)
    }

    /// Whether the transition linearization is refreshed by smoothing.
    pub fn is_dynamic(self) -> bool {
        matches!(self, Variant::Diekf | Variant::Diukf | Variant::Diplf)
    }

    pub fn iterates(self) -> bool {
        !matches!(self, Variant::Ekf | Variant::Ukf)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                FilterError::InvalidConfig(format!(
                    "unknown variant '{s}', expected one of {}",
                    Variant::ALL.map(|v| v.name()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationConfig {
    pub max_iters: usize,
    /// Stop once `KL(postⁱ ‖ postⁱ⁺¹) < gamma`.
    pub gamma: f64,
    pub variant: Variant,
    pub ut: UnscentedConfig,
    /// Line-searched updates instead of full smoother steps.
    pub damping: Option<LineSearchConfig>,
    /// Covariance refreshes of the damped DIPLF.
    pub outer_max_iters: usize,
}

impl IterationConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            max_iters: 10,
            gamma: 1e-6,
            variant,
            ut: UnscentedConfig::default(),
            damping: None,
            outer_max_iters: 5,
        }
    }

    /// Damped steps are fractional, so the iteration budget is larger; the
    /// KL stopping rule is unchanged.
    pub fn damped(variant: Variant) -> Self {
        Self {
            max_iters: DAMPED_MAX_ITERS,
            damping: Some(LineSearchConfig::default()),
            ..Self::new(variant)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(FilterError::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(FilterError::InvalidConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.outer_max_iters == 0 {
            return Err(FilterError::InvalidConfig("outer_max_iters must be at least 1".into()));
        }
        if let Some(ls) = &self.damping {
            ls.validate()?;
        }
        Ok(())
    }

    pub fn linearization(&self) -> Linearization {
        if self.variant.is_analytical() {
            Linearization::Analytical
        } else {
            Linearization::Unscented(self.ut)
        }
    }
}

/// The four densities handled within one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct LagOneBelief {
    /// `q(x_{k−1} | y_{1:k−1})`
    pub prior_prev: GaussianDensity,
    /// `q(x_k | y_{1:k−1})`
    pub predictive: GaussianDensity,
    /// `q(x_k | y_{1:k})`
    pub posterior: GaussianDensity,
    /// `q(x_{k−1} | y_{1:k})`
    pub smoothed_prev: GaussianDensity,
}

/// Which density of the current iteration a linearization is taken about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Prior,
    /// The predictive of the current iteration.
    Predictive,
    /// The predictive of iteration 0.
    InitialPredictive,
    /// The posterior of the previous iteration.
    Posterior,
    /// The smoothed density of the previous iteration.
    Smoothed,
}

/// Mean and covariance sources of a linearization density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Anchor {
    pub mean: Role,
    pub cov: Role,
}

impl Anchor {
    const fn both(role: Role) -> Self {
        Self { mean: role, cov: role }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationPolicy {
    pub linearization: Linearization,
    /// `None` keeps the transition approximation of the previous iteration.
    pub transition: Option<Anchor>,
    pub measurement: Anchor,
}

/// Linearization policy of `variant` at `iteration`; `None` once the variant
/// does not iterate any further.
pub fn select_linearizer(variant: Variant, iteration: usize, ut: UnscentedConfig) -> Option<IterationPolicy> {
    use Role::*;
    let linearization = if variant.is_analytical() {
        Linearization::Analytical
    } else {
        Linearization::Unscented(ut)
    };
    if iteration == 0 {
        return Some(IterationPolicy {
            linearization,
            transition: Some(Anchor::both(Prior)),
            measurement: Anchor::both(Predictive),
        });
    }
    let (transition, measurement) = match variant {
        Variant::Ekf | Variant::Ukf => return None,
        Variant::Iekf | Variant::Iplf => (None, Anchor::both(Posterior)),
        Variant::Iukf => (
            None,
            Anchor {
                mean: Posterior,
                cov: InitialPredictive,
            },
        ),
        Variant::Diekf | Variant::Diplf => (Some(Anchor::both(Smoothed)), Anchor::both(Posterior)),
        Variant::Diukf => (
            Some(Anchor { mean: Smoothed, cov: Prior }),
            Anchor {
                mean: Posterior,
                cov: InitialPredictive,
            },
        ),
    };
    Some(IterationPolicy {
        linearization,
        transition,
        measurement,
    })
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepTrace {
    /// Index 0 is the non-iterated pass.
    pub iterates: Vec<LagOneBelief>,
    pub transition_approx: Vec<AffineApproximation>,
    pub measurement_approx: Vec<AffineApproximation>,
    /// Densities the transition and measurement were linearized about.
    pub linearization_points: Vec<(GaussianDensity, GaussianDensity)>,
    pub converged_at: Option<usize>,
    /// Iteration at which a non-finite or exploding iterate was discarded.
    pub diverged_at: Option<usize>,
}

impl StepTrace {
    fn push(
        &mut self,
        belief: LagOneBelief,
        f_aff: AffineApproximation,
        h_aff: AffineApproximation,
        points: (GaussianDensity, GaussianDensity),
    ) {
        self.iterates.push(belief);
        self.transition_approx.push(f_aff);
        self.measurement_approx.push(h_aff);
        self.linearization_points.push(points);
    }
}

fn resolve<'a>(
    role: Role,
    prior: &'a GaussianDensity,
    predictive: &'a GaussianDensity,
    initial_predictive: &'a GaussianDensity,
    last: Option<&'a LagOneBelief>,
) -> &'a GaussianDensity {
    match (role, last) {
        (Role::Prior, _) => prior,
        (Role::Predictive, _) => predictive,
        (Role::InitialPredictive, _) => initial_predictive,
        (Role::Posterior, Some(b)) => &b.posterior,
        (Role::Smoothed, Some(b)) => &b.smoothed_prev,
        // Iteration 0 has no previous iterate; policies never ask for one.
        (Role::Posterior, None) => predictive,
        (Role::Smoothed, None) => prior,
    }
}

pub(crate) fn anchor_density(
    anchor: Anchor,
    prior: &GaussianDensity,
    predictive: &GaussianDensity,
    initial_predictive: &GaussianDensity,
    last: Option<&LagOneBelief>,
) -> Result<GaussianDensity> {
    let mean = resolve(anchor.mean, prior, predictive, initial_predictive, last);
    if anchor.mean == anchor.cov {
        return Ok(mean.clone());
    }
    let cov = resolve(anchor.cov, prior, predictive, initial_predictive, last);
    cov.with_mean(mean.mean().clone())
}

fn is_blowup(e: &FilterError) -> bool {
    match e {
        FilterError::NonFinite { .. } => true,
        FilterError::AtIteration { source, .. } => is_blowup(source),
        other => other.is_divergence(),
    }
}

/// One time step of the (undamped) dynamically iterated filter or one of its
/// restrictions.
pub fn dif_step(
    prior_prev: &GaussianDensity,
    y: &DVector<f64>,
    model: &StateSpaceModel,
    cfg: &IterationConfig,
) -> Result<(LagOneBelief, StepTrace)> {
    cfg.validate()?;
    check_dim("prior dimension", model.state_dim(), prior_prev.dim())?;
    check_dim("measurement dimension", model.measurement_dim(), y.len())?;

    let f = model.transition();
    let h = model.measurement();
    let mut trace = StepTrace::default();

    let policy0 = select_linearizer(cfg.variant, 0, cfg.ut).expect("iteration 0 always runs");
    let lin = policy0.linearization;
    let first = (|| {
        let f_aff = lin.linearize(f, prior_prev)?;
        let pred = crate::smoother::time_update(prior_prev, &f_aff, model.q())?;
        let h_aff = lin.linearize(h, &pred)?;
        let pass = smoother_pass(prior_prev, y, &f_aff, &h_aff, model.q(), model.r())?;
        Ok::<_, FilterError>((f_aff, h_aff, pass))
    })()
    .map_err(|e| e.at_iteration(0))?;
    let (mut f_aff, h_aff0, pass) = first;
    let initial_predictive = pass.predictive.clone();
    trace.push(
        LagOneBelief {
            prior_prev: prior_prev.clone(),
            predictive: pass.predictive,
            posterior: pass.posterior,
            smoothed_prev: pass.smoothed_prev,
        },
        f_aff.clone(),
        h_aff0,
        (prior_prev.clone(), initial_predictive.clone()),
    );

    for i in 1..=cfg.max_iters {
        let Some(policy) = select_linearizer(cfg.variant, i, cfg.ut) else {
            break;
        };
        let last = trace.iterates.last().expect("iteration 0 recorded");
        let attempt = (|| {
            let mut f_point = last.smoothed_prev.clone();
            if let Some(anchor) = policy.transition {
                f_point = anchor_density(anchor, prior_prev, &last.predictive, &initial_predictive, Some(last))?;
                f_aff = policy.linearization.linearize(f, &f_point)?;
            } else if let Some((p, _)) = trace.linearization_points.last() {
                f_point = p.clone();
            }
            let predictive = crate::smoother::time_update(prior_prev, &f_aff, model.q())?;
            let h_point = anchor_density(policy.measurement, prior_prev, &predictive, &initial_predictive, Some(last))?;
            let h_aff = policy.linearization.linearize(h, &h_point)?;
            let pass = smoother_pass(prior_prev, y, &f_aff, &h_aff, model.q(), model.r())?;
            let kl = kl_divergence(&last.posterior, &pass.posterior)?;
            Ok::<_, FilterError>((pass, h_aff, (f_point, h_point), kl))
        })();
        let (pass, h_aff, points, kl) = match attempt {
            Ok(v) => v,
            Err(e) if is_blowup(&e) => {
                trace.diverged_at = Some(i);
                break;
            }
            Err(e) => return Err(e.at_iteration(i)),
        };
        if !kl.is_finite() || kl > KL_BLOWUP {
            trace.diverged_at = Some(i);
            break;
        }
        trace.push(
            LagOneBelief {
                prior_prev: prior_prev.clone(),
                predictive: pass.predictive,
                posterior: pass.posterior,
                smoothed_prev: pass.smoothed_prev,
            },
            f_aff.clone(),
            h_aff,
            points,
        );
        if kl < cfg.gamma {
            trace.converged_at = Some(i);
            break;
        }
    }

    let belief = trace.iterates.last().cloned().expect("iteration 0 recorded");
    Ok((belief, trace))
}

/// Runs a filter step, dispatching to the damped loop when configured.
pub fn filter_step(
    prior_prev: &GaussianDensity,
    y: &DVector<f64>,
    model: &StateSpaceModel,
    cfg: &IterationConfig,
) -> Result<(LagOneBelief, StepTrace)> {
    match &cfg.damping {
        Some(ls) => damped::damped_dif_step(prior_prev, y, model, cfg, ls).map(|(b, t)| (b, t.base)),
        None => dif_step(prior_prev, y, model, cfg),
    }
}

/// Filters a measurement sequence, feeding each posterior forward as the next
/// prior. The returned beliefs also carry the one-lag smoothed estimates.
pub fn run_filter(
    prior0: &GaussianDensity,
    ys: &[DVector<f64>],
    model: &StateSpaceModel,
    cfg: &IterationConfig,
) -> Result<Vec<LagOneBelief>> {
    Ok(run_filter_traced(prior0, ys, model, cfg)?
        .into_iter()
        .map(|(b, _)| b)
        .collect())
}

pub fn run_filter_traced(
    prior0: &GaussianDensity,
    ys: &[DVector<f64>],
    model: &StateSpaceModel,
    cfg: &IterationConfig,
) -> Result<Vec<(LagOneBelief, StepTrace)>> {
    if ys.is_empty() {
        return Err(FilterError::Precondition("at least one measurement is required".into()));
    }
    let mut out: Vec<(LagOneBelief, StepTrace)> = Vec::with_capacity(ys.len());
    let mut prior = prior0.clone();
    for (k, y) in ys.iter().enumerate() {
        let (belief, trace) = filter_step(&prior, y, model, cfg).map_err(|e| e.at_time(k))?;
        prior = belief.posterior.clone();
        out.push((belief, trace));
    }
    Ok(out)
}
