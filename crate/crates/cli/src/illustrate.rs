//! DIEKF on the scalar cubic model against a dense-grid posterior.

use std::path::{Path, PathBuf};

use difilter::dif::dif_step;
use difilter::models::{make_illustration_model, StateSpaceModel};
use difilter::{GaussianDensity, IterationConfig, Variant};
use nalgebra::DVector;

use crate::config::IllustrateConfig;
use crate::error::CliError;
use crate::output::{num, write_csv};

pub const GRID_HEADER: [&str; 2] = ["x", "true_posterior"];
pub const ITERATES_HEADER: [&str; 4] = ["iteration", "role", "mean", "var"];
pub const KL_HEADER: [&str; 2] = ["iteration", "kl_true_to_posterior"];

#[derive(Debug, Clone, PartialEq)]
pub struct IterateRow {
    pub iteration: usize,
    pub role: &'static str,
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Illustration {
    /// `(x, p(x_k | y_k))` normalized by the trapezoid rule.
    pub grid: Vec<(f64, f64)>,
    pub rows: Vec<IterateRow>,
    /// `KL(grid posterior ‖ posterior at iteration i)`.
    pub kl: Vec<f64>,
}

fn grid_points(cfg: &IllustrateConfig) -> Result<Vec<f64>, CliError> {
    if cfg.grid_points < 3 || !(cfg.grid_max > cfg.grid_min) {
        return Err(CliError::Config(
            "illustrate grid needs grid_max > grid_min and at least 3 points".into(),
        ));
    }
    let h = (cfg.grid_max - cfg.grid_min) / (cfg.grid_points - 1) as f64;
    Ok((0..cfg.grid_points).map(|i| cfg.grid_min + h * i as f64).collect())
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + (2.0 * std::f64::consts::PI * var).ln())
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// `p(x_k | y_k) ∝ N(y; h(x_k), R) ∫ N(x_k; f(x_{k-1}), Q) N(x_{k-1}; m, P) dx_{k-1}`,
/// with the inner integral evaluated on the same grid.
pub fn true_posterior(cfg: &IllustrateConfig, model: &StateSpaceModel) -> Result<Vec<(f64, f64)>, CliError> {
    let xs = grid_points(cfg)?;
    let q = model.q()[(0, 0)];
    let r = model.r()[(0, 0)];
    let h = xs[1] - xs[0];
    // Trapezoid weights folded into the prior term.
    let prior_terms: Vec<(f64, f64)> = xs
        .iter()
        .enumerate()
        .map(|(j, &x0)| {
            let w = if j == 0 || j + 1 == xs.len() { 0.5 * h } else { h };
            let fx = model.transition().eval(&DVector::from_element(1, x0))?[0];
            Ok((fx, log_normal(x0, cfg.prior_mean, cfg.prior_var) + w.ln()))
        })
        .collect::<Result<_, difilter::FilterError>>()?;
    let log_post: Vec<f64> = xs
        .iter()
        .map(|&x1| {
            let terms = prior_terms.iter().map(|&(fx, lp)| lp + log_normal(x1, fx, q));
            let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + terms.map(|t| (t - max).exp()).sum::<f64>().ln();
            let hx = model.measurement().eval(&DVector::from_element(1, x1)).map(|v| v[0]);
            hx.map(|hx| lse + log_normal(cfg.y, hx, r))
        })
        .collect::<Result<_, _>>()?;
    let max = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_post.iter().map(|l| (l - max).exp()).collect();
    let z = trapezoid(&xs, &unnorm);
    Ok(xs.into_iter().zip(unnorm.into_iter().map(|p| p / z)).collect())
}

/// `∫ p log(p / N(x; mean, var)) dx` over the grid.
pub fn kl_grid_to_gaussian(grid: &[(f64, f64)], mean: f64, var: f64) -> f64 {
    let xs: Vec<f64> = grid.iter().map(|g| g.0).collect();
    let integrand: Vec<f64> = grid
        .iter()
        .map(|&(x, p)| if p > 0.0 { p * (p.ln() - log_normal(x, mean, var)) } else { 0.0 })
        .collect();
    trapezoid(&xs, &integrand)
}

pub fn run(cfg: &IllustrateConfig) -> Result<Illustration, CliError> {
    let model = make_illustration_model();
    let prior = GaussianDensity::scalar(cfg.prior_mean, cfg.prior_var)?;
    let icfg = IterationConfig {
        max_iters: cfg.max_iters,
        ..IterationConfig::new(Variant::Diekf)
    };
    let (_, trace) = dif_step(&prior, &DVector::from_element(1, cfg.y), &model, &icfg)?;
    let grid = true_posterior(cfg, &model)?;
    let mut rows = Vec::new();
    let mut kl = Vec::new();
    for (i, b) in trace.iterates.iter().enumerate() {
        for (role, d) in [("smoothed", &b.smoothed_prev), ("predictive", &b.predictive), ("posterior", &b.posterior)] {
            rows.push(IterateRow {
                iteration: i,
                role,
                mean: d.mean()[0],
                var: d.cov()[(0, 0)],
            });
        }
        kl.push(kl_grid_to_gaussian(&grid, b.posterior.mean()[0], b.posterior.cov()[(0, 0)]));
    }
    Ok(Illustration { grid, rows, kl })
}

pub fn write(ill: &Illustration, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    Ok(vec![
        write_csv(
            &dir.join("grid.csv"),
            &GRID_HEADER,
            ill.grid.iter().map(|&(x, p)| vec![num(x), num(p)]),
        )?,
        write_csv(
            &dir.join("iterates.csv"),
            &ITERATES_HEADER,
            ill.rows
                .iter()
                .map(|r| vec![r.iteration.to_string(), r.role.to_string(), num(r.mean), num(r.var)]),
        )?,
        write_csv(
            &dir.join("kl.csv"),
            &KL_HEADER,
            ill.kl.iter().enumerate().map(|(i, k)| vec![i.to_string(), num(*k)]),
        )?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;

    #[test]
    fn linear_gaussian_grid_matches_closed_form() {
        // With the cubic coefficient zeroed the grid must reproduce the
        // Kalman posterior N(y·P'/(P'+R), P'R/(P'+R)) with P' = Q.
        let model = StateSpaceModel::new(
            std::sync::Arc::new(difilter::models::Cubic::new(0.0)),
            std::sync::Arc::new(difilter::models::AffineMap::identity(1)),
            nalgebra::DMatrix::from_element(1, 1, 0.1),
            nalgebra::DMatrix::from_element(1, 1, 0.1),
        )
        .unwrap();
        let cfg = Config::default().illustrate;
        let grid = true_posterior(&cfg, &model).unwrap();
        let (mean, var) = (cfg.y * 0.5, 0.05);
        assert!(kl_grid_to_gaussian(&grid, mean, var).abs() < 1e-6);
        let m: f64 = trapezoid(
            &grid.iter().map(|g| g.0).collect::<Vec<_>>(),
            &grid.iter().map(|g| g.0 * g.1).collect::<Vec<_>>(),
        );
        assert!((m - mean).abs() < 1e-6, "{m}");
    }

    #[test]
    fn small_default_run() {
        let mut cfg = Config::default().illustrate;
        cfg.grid_points = 801;
        let ill = run(&cfg).unwrap();
        assert_eq!(ill.rows.len(), 3 * ill.kl.len());
        assert!(ill.kl.iter().all(|k| *k >= -1e-9));
        let xs: Vec<f64> = ill.grid.iter().map(|g| g.0).collect();
        let ps: Vec<f64> = ill.grid.iter().map(|g| g.1).collect();
        assert!((trapezoid(&xs, &ps) - 1.0).abs() < 1e-12);
    }
}
