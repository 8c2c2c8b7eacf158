//! Oracle suites behind `dif verify`. Each suite returns the first violated
//! property as its error.

use std::time::{Duration, Instant};

use difilter::bench::{simulate, Scenario, TrackingSetup, Truth};
use difilter::damped::{evaluate_loss, gn_step, loss_gradient, JointIterate, LossWeights};
use difilter::dif::run_filter_traced;
use difilter::linearization::{linearize_analytical, linearize_statistical, KappaRule};
use difilter::models::{
    make_illustration_model, make_tdoa_model, make_trig_model, AffineMap, CoordinatedTurnConfig, StateSpaceModel,
    TdoaConfig,
};
use difilter::smoother::smoother_pass;
use difilter::{kl_divergence, GaussianDensity, IterationConfig, UnscentedConfig, Variant};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

type Check = Result<(), String>;

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub result: Check,
    pub runtime: Duration,
}

pub type Suite = fn(u64) -> Check;

pub const SUITES: [(&str, Suite); 6] = [
    ("kf-equivalence", kf_equivalence),
    ("gn-equivalence", gn_equivalence),
    ("sl-exactness", sl_exactness),
    ("gradient-check", gradient_check),
    ("residual-loss", residual_loss),
    ("covariance-invariants", covariance_invariants),
];

pub fn run_all(seed: u64) -> Vec<SuiteOutcome> {
    SUITES
        .iter()
        .map(|(name, suite)| {
            let start = Instant::now();
            let result = suite(seed);
            SuiteOutcome {
                name,
                result,
                runtime: start.elapsed(),
            }
        })
        .collect()
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let b = normal_matrix(rng, n, n);
    &b * b.transpose() / n as f64 + DMatrix::identity(n, n) * floor
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Random stable affine model with its raw matrices.
struct AffineCase {
    model: StateSpaceModel,
    a: DMatrix<f64>,
    b: DVector<f64>,
    h: DMatrix<f64>,
    c: DVector<f64>,
    prior: GaussianDensity,
    ys: Vec<DVector<f64>>,
}

fn affine_case(rng: &mut ChaCha8Rng, n: usize, m: usize, steps: usize) -> AffineCase {
    let mut a = normal_matrix(rng, n, n);
    let radius = a.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max);
    a *= 0.95 / radius.max(0.95);
    let b = normal_vector(rng, n) * 0.1;
    let h = normal_matrix(rng, m, n);
    let c = normal_vector(rng, m) * 0.1;
    let q = spd(rng, n, 0.1);
    let r = spd(rng, m, 0.1);
    let model = StateSpaceModel::new(
        Arc::new(AffineMap::new(a.clone(), b.clone()).expect("square")),
        Arc::new(AffineMap::new(h.clone(), c.clone()).expect("shape")),
        q,
        r,
    )
    .expect("valid model");
    let prior = GaussianDensity::new(normal_vector(rng, n), spd(rng, n, 0.5)).expect("spd");
    let ys = (0..steps).map(|_| normal_vector(rng, m) * 2.0).collect();
    AffineCase {
        model,
        a,
        b,
        h,
        c,
        prior,
        ys,
    }
}

/// Textbook covariance-form Kalman filter with the lag-one smoother; returns
/// `(posterior mean, posterior cov, smoothed mean, smoothed cov)` per step.
#[allow(clippy::type_complexity)]
fn kalman_oracle(case: &AffineCase) -> Vec<(DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (q, r) = (case.model.q(), case.model.r());
    let mut m = case.prior.mean().clone();
    let mut p = case.prior.cov().clone();
    let mut out = Vec::new();
    for y in &case.ys {
        let m_pred = &case.a * &m + &case.b;
        let p_pred = &case.a * &p * case.a.transpose() + q;
        let s = &case.h * &p_pred * case.h.transpose() + r;
        let k = &p_pred * case.h.transpose() * s.clone().try_inverse().expect("S invertible");
        let m_post = &m_pred + &k * (y - &case.h * &m_pred - &case.c);
        let p_post = &p_pred - &k * &s * k.transpose();
        let g = &p * case.a.transpose() * p_pred.clone().try_inverse().expect("P⁻ invertible");
        let m_s = &m + &g * (&m_post - &m_pred);
        let p_s = &p + &g * (&p_post - &p_pred) * g.transpose();
        out.push((m_post.clone(), p_post.clone(), m_s, p_s));
        m = m_post;
        p = p_post;
    }
    out
}

fn kf_equivalence(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for n in [1, 2, 5] {
        for m in [1, 3] {
            let case = affine_case(&mut rng, n, m, 50);
            let oracle = kalman_oracle(&case);
            for variant in Variant::ALL {
                for damped in [false, true] {
                    if damped && !variant.is_dynamic() {
                        continue;
                    }
                    let cfg = if damped {
                        IterationConfig::damped(variant)
                    } else {
                        IterationConfig::new(variant)
                    };
                    let label = format!("{}{variant} n={n} m={m}", if damped { "ls-" } else { "" });
                    let run = run_filter_traced(&case.prior, &case.ys, &case.model, &cfg)
                        .map_err(|e| format!("{label}: {e}"))?;
                    for (k, ((belief, _), (mp, pp, ms, ps))) in run.iter().zip(&oracle).enumerate() {
                        let err = (belief.posterior.mean() - mp)
                            .amax()
                            .max(max_abs(belief.posterior.cov(), pp))
                            .max((belief.smoothed_prev.mean() - ms).amax())
                            .max(max_abs(belief.smoothed_prev.cov(), ps));
                        if !(err <= 1e-9) {
                            return Err(format!("{label}: step {k} differs from the Kalman oracle by {err:.3e}"));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn ct_config() -> CoordinatedTurnConfig {
    CoordinatedTurnConfig {
        period: 1.0,
        q1: 0.1,
        q2: 0.01,
    }
}

/// Models of the experiments with a sampler of plausible `(prior, iterate, y)`.
fn gn_models() -> Vec<(&'static str, StateSpaceModel, fn(&mut ChaCha8Rng) -> DVector<f64>)> {
    let tracking = difilter::models::make_tracking_model(&ct_config(), 1.0).expect("valid");
    let tdoa = make_tdoa_model(&ct_config(), &TdoaConfig::default()).expect("valid");
    fn scalar(rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_element(1, rng.random_range(-3.0..3.0))
    }
    fn tracking_state(rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_column_slice(&[
            rng.random_range(-20.0..20.0),
            rng.random_range(5.0..15.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(5.0..15.0),
            rng.random_range(-0.3..0.3),
        ])
    }
    fn room_state(rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_column_slice(&[
            rng.random_range(0.8..3.2),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.8..3.2),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.5..1.5),
        ])
    }
    vec![
        ("cubic", make_illustration_model(), scalar),
        ("trig", make_trig_model(), scalar),
        ("ct", tracking, tracking_state),
        ("tdoa", tdoa, room_state),
    ]
}

struct GnProblem {
    prior: GaussianDensity,
    it: JointIterate,
    y: DVector<f64>,
    w: LossWeights,
}

fn gn_problem(rng: &mut ChaCha8Rng, model: &StateSpaceModel, sample: fn(&mut ChaCha8Rng) -> DVector<f64>) -> GnProblem {
    let n = model.state_dim();
    let prior = GaussianDensity::new(sample(rng), spd(rng, n, 0.1)).expect("spd");
    let prev = sample(rng);
    let curr = model.transition().eval(&prev).expect("in domain") + normal_vector(rng, n) * 0.1;
    let y = model.measurement().eval(&sample(rng)).expect("in domain");
    let w = LossWeights::new(prior.cov().clone(), model.r().clone(), model.q().clone()).expect("spd weights");
    GnProblem {
        prior,
        it: JointIterate::new(prev, curr).expect("same dims"),
        y,
        w,
    }
}

fn gn_equivalence(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e);
    for (name, model, sample) in gn_models() {
        for trial in 0..200 {
            let pb = gn_problem(&mut rng, &model, sample);
            let step = gn_step(&pb.it, &pb.y, &pb.prior, &model, &pb.w).map_err(|e| format!("{name}: {e}"))?;
            let f_aff = linearize_analytical(model.transition(), &pb.it.prev).map_err(|e| e.to_string())?;
            let h_aff = linearize_analytical(model.measurement(), &pb.it.curr).map_err(|e| e.to_string())?;
            let pass = smoother_pass(&pb.prior, &pb.y, &f_aff, &h_aff, model.q(), model.r())
                .map_err(|e| format!("{name}: {e}"))?;
            let proposal = JointIterate::new(pass.smoothed_prev.mean().clone(), pass.posterior.mean().clone())
                .expect("same dims")
                .stacked()
                - pb.it.stacked();
            let err = (&step - &proposal).norm() / step.norm().max(1e-8);
            if !(err <= 1e-6) {
                return Err(format!(
                    "{name}: trial {trial}: Gauss-Newton step and smoother proposal differ by {err:.3e} relative"
                ));
            }
        }
    }
    Ok(())
}

fn sl_exactness(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51);
    for n in 1..=5 {
        for m in 1..=3 {
            let a = normal_matrix(&mut rng, m, n);
            let b = normal_vector(&mut rng, m);
            let map = AffineMap::new(a.clone(), b.clone()).expect("shape");
            let d = GaussianDensity::new(normal_vector(&mut rng, n), spd(&mut rng, n, 0.1)).expect("spd");
            for kappa in [KappaRule::Classical, KappaRule::Fixed(1.0)] {
                let cfg = UnscentedConfig { kappa };
                if cfg.weights(n).is_err() {
                    continue;
                }
                let aff = linearize_statistical(&map, &d, &cfg).map_err(|e| e.to_string())?;
                let err = max_abs(aff.slope(), &a).max((aff.offset() - &b).amax());
                let omega = aff.omega().norm();
                if !(err <= 1e-9 && omega <= 1e-9) {
                    return Err(format!(
                        "affine map n={n} m={m}: slope/offset error {err:.3e}, |Omega| {omega:.3e}"
                    ));
                }
            }
        }
    }
    let square = difilter::models::FnMap::new(1, 1, |x: &DVector<f64>| DVector::from_element(1, x[0] * x[0]));
    let d = GaussianDensity::scalar(0.0, 1.0).expect("valid");
    let aff = linearize_statistical(&square, &d, &UnscentedConfig { kappa: KappaRule::Fixed(2.0) })
        .map_err(|e| e.to_string())?;
    let err = aff.slope()[(0, 0)]
        .abs()
        .max((aff.offset()[0] - 1.0).abs())
        .max((aff.omega()[(0, 0)] - 2.0).abs());
    if !(err <= 1e-10) {
        return Err(format!("x² about N(0,1) with kappa=2: (A, b, Omega) off by {err:.3e}"));
    }
    Ok(())
}

fn gradient_check(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9d);
    for (name, model, sample) in gn_models() {
        for trial in 0..20 {
            let pb = gn_problem(&mut rng, &model, sample);
            let g = loss_gradient(&pb.it, &pb.y, &pb.prior, &model, &pb.w).map_err(|e| e.to_string())?;
            let s = pb.it.stacked();
            let loss_at = |v: &DVector<f64>| -> Result<f64, String> {
                let it = JointIterate::from_stacked(v).map_err(|e| e.to_string())?;
                evaluate_loss(&it, &pb.y, &pb.prior, &model, &pb.w).map_err(|e| e.to_string())
            };
            for i in 0..s.len() {
                let h = 1e-6 * s[i].abs().max(1.0);
                let mut up = s.clone();
                let mut down = s.clone();
                up[i] += h;
                down[i] -= h;
                let fd = (loss_at(&up)? - loss_at(&down)?) / (2.0 * h);
                let err = (g[i] - fd).abs() / g.amax().max(1.0);
                if !(err <= 1e-5) {
                    return Err(format!(
                        "{name}: trial {trial}: gradient component {i} differs from finite differences by {err:.3e}"
                    ));
                }
            }
        }
    }
    Ok(())
}

fn quad(v: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    (v.transpose() * s.clone().try_inverse().expect("invertible weight") * v)[(0, 0)]
}

fn residual_loss(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a);
    for (name, model, sample) in gn_models() {
        for trial in 0..50 {
            let pb = gn_problem(&mut rng, &model, sample);
            let loss = evaluate_loss(&pb.it, &pb.y, &pb.prior, &model, &pb.w).map_err(|e| e.to_string())?;
            let f = model.transition().eval(&pb.it.prev).map_err(|e| e.to_string())?;
            let h = model.measurement().eval(&pb.it.curr).map_err(|e| e.to_string())?;
            let direct = 0.5
                * (quad(&(&pb.it.prev - pb.prior.mean()), pb.prior.cov())
                    + quad(&(&pb.y - h), model.r())
                    + quad(&(&pb.it.curr - f), model.q()));
            let err = (loss - direct).abs() / direct.abs().max(f64::MIN_POSITIVE);
            // The explicit inverse carries cond·ε error of its own.
            if !(err <= 1e-10) {
                return Err(format!("{name}: trial {trial}: residual norm and loss differ by {err:.3e} relative"));
            }
        }
    }
    Ok(())
}

fn check_density(label: &str, d: &GaussianDensity) -> Check {
    let p = d.cov();
    let asym = max_abs(p, &p.transpose());
    if asym != 0.0 {
        return Err(format!("{label}: covariance asymmetric by {asym:.3e}"));
    }
    let eig = p.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo >= -1e-10 * hi.max(0.0)) {
        return Err(format!("{label}: covariance has eigenvalue {lo:.3e} (max {hi:.3e})"));
    }
    Ok(())
}

/// `½(tr(Σq⁻¹Σp) + dᵀΣq⁻¹d − n + ln|Σq| − ln|Σp|)` with explicit inverses.
fn kl_explicit(p: &GaussianDensity, q: &GaussianDensity) -> f64 {
    let qi = q.cov().clone().try_inverse().expect("invertible");
    let d = q.mean() - p.mean();
    let n = p.dim() as f64;
    0.5 * ((&qi * p.cov()).trace() + (d.transpose() * &qi * &d)[(0, 0)] - n + q.cov().determinant().ln()
        - p.cov().determinant().ln())
}

fn covariance_invariants(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0);
    let setup = TrackingSetup {
        steps: 30,
        ..TrackingSetup::default()
    };
    let tracking = setup.case(0.1, 1.0).map_err(|e| e.to_string())?.scenario;
    let mut cases = vec![("ct", tracking)];
    for n in [2, 5] {
        let c = affine_case(&mut rng, n, 3, 20);
        cases.push((
            "affine",
            Scenario {
                model: c.model,
                prior: c.prior.clone(),
                true_x0: c.prior.mean().clone(),
                steps: 20,
                seed,
                truth: Truth::Simulated,
            },
        ));
    }
    for (name, scenario) in &cases {
        let sim = simulate(scenario).map_err(|e| e.to_string())?;
        for variant in Variant::ALL {
            let cfg = IterationConfig::new(variant);
            let run = run_filter_traced(&scenario.prior, &sim.measurements, &scenario.model, &cfg)
                .map_err(|e| format!("{name} {variant}: {e}"))?;
            for (k, (_, trace)) in run.iter().enumerate() {
                for (i, b) in trace.iterates.iter().enumerate() {
                    for (role, d) in [("predictive", &b.predictive), ("posterior", &b.posterior), ("smoothed", &b.smoothed_prev)] {
                        check_density(&format!("{name} {variant} step {k} iteration {i} {role}"), d)?;
                    }
                    if i > 0 {
                        let prev = &trace.iterates[i - 1].posterior;
                        let kl = kl_divergence(prev, &b.posterior).map_err(|e| e.to_string())?;
                        let direct = kl_explicit(prev, &b.posterior);
                        if !(kl >= 0.0 && (kl - direct).abs() <= 1e-8 * direct.abs().max(1.0)) {
                            return Err(format!(
                                "{name} {variant} step {k}: KL {kl:.3e} against the explicit formula {direct:.3e}"
                            ));
                        }
                    }
                }
            }
        }
    }

    // Affine measurements leave nothing for IEKF to refine.
    let scenario = &cases[0].1;
    let sim = simulate(scenario).map_err(|e| e.to_string())?;
    let ekf = difilter::run_filter(&scenario.prior, &sim.measurements, &scenario.model, &IterationConfig::new(Variant::Ekf))
        .map_err(|e| e.to_string())?;
    let iekf = difilter::run_filter(&scenario.prior, &sim.measurements, &scenario.model, &IterationConfig::new(Variant::Iekf))
        .map_err(|e| e.to_string())?;
    for (k, (a, b)) in ekf.iter().zip(&iekf).enumerate() {
        let err = (a.posterior.mean() - b.posterior.mean()).amax().max(max_abs(a.posterior.cov(), b.posterior.cov()));
        if !(err <= 1e-12) {
            return Err(format!("IEKF differs from EKF under an affine measurement at step {k} by {err:.3e}"));
        }
    }
    // Nonlinear dynamics do give DIEKF something to refine.
    let trig = make_trig_model();
    let prior = GaussianDensity::scalar(-2.9, 1.0).expect("valid");
    let y = vec![DVector::from_element(1, -0.5)];
    let ekf = difilter::run_filter(&prior, &y, &trig, &IterationConfig::new(Variant::Ekf)).map_err(|e| e.to_string())?;
    let diekf = difilter::run_filter(&prior, &y, &trig, &IterationConfig::new(Variant::Diekf)).map_err(|e| e.to_string())?;
    let gap = (ekf[0].posterior.mean() - diekf[0].posterior.mean()).amax();
    if !(gap > 1e-6) {
        return Err(format!("DIEKF coincides with EKF on the trigonometric model (gap {gap:.3e})"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for outcome in run_all(0) {
            assert!(outcome.result.is_ok(), "{}: {:?}", outcome.name, outcome.result);
        }
    }
}
