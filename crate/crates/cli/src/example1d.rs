//! IEKF, DIEKF and LS-DIEKF on one step of the scalar trigonometric model,
//! drawn over the joint loss landscape of `(x_0, x_1)`.

use std::path::{Path, PathBuf};

use difilter::damped::{damped_dif_step, evaluate_loss, JointIterate, LineSearchConfig, LossWeights};
use difilter::dif::dif_step;
use difilter::models::{make_trig_model, StateSpaceModel};
use difilter::{GaussianDensity, IterationConfig, StepTrace, Variant};
use nalgebra::DVector;

use crate::config::Example1dConfig;
use crate::error::CliError;
use crate::output::{num, write_csv};

pub const LANDSCAPE_HEADER: [&str; 3] = ["x0", "x1", "loss"];
pub const PATH_HEADER: [&str; 4] = ["iteration", "x0", "x1", "loss"];
pub const SUMMARY_HEADER: [&str; 7] = ["algorithm", "points", "final_x0", "final_x1", "final_loss", "max_loss", "left_grid"];

pub const ALGORITHMS: [&str; 3] = ["iekf", "diekf", "ls-diekf"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub x0: f64,
    pub x1: f64,
    /// Infinite when the loss cannot be evaluated.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example1d {
    pub y: f64,
    pub axis: Vec<f64>,
    /// Row-major over `x0`, then `x1`.
    pub landscape: Vec<f64>,
    /// Starting point followed by the iterates, per entry of [`ALGORITHMS`].
    pub paths: Vec<Vec<PathPoint>>,
}

impl Example1d {
    pub fn landscape_point(&self, i: usize, j: usize) -> PathPoint {
        PathPoint {
            x0: self.axis[i],
            x1: self.axis[j],
            loss: self.landscape[i * self.axis.len() + j],
        }
    }

    pub fn grid_min(&self) -> PathPoint {
        let (k, _) = self
            .landscape
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bk, bv), (k, &v)| if v < bv { (k, v) } else { (bk, bv) });
        self.landscape_point(k / self.axis.len(), k % self.axis.len())
    }

    pub fn path(&self, algorithm: &str) -> Option<&[PathPoint]> {
        ALGORITHMS
            .iter()
            .position(|a| *a == algorithm)
            .map(|i| self.paths[i].as_slice())
    }

    /// Whether any iterate lies outside the landscape square.
    pub fn left_grid(&self, algorithm: &str) -> bool {
        let (lo, hi) = (self.axis[0], *self.axis.last().expect("non-empty axis"));
        self.path(algorithm)
            .unwrap_or(&[])
            .iter()
            .any(|p| !(lo..=hi).contains(&p.x0) || !(lo..=hi).contains(&p.x1))
    }
}

/// The noise-free `arctan(f(true_x))` unless the config fixes `y`.
pub fn measurement(cfg: &Example1dConfig, model: &StateSpaceModel) -> Result<f64, CliError> {
    if let Some(y) = cfg.y {
        return Ok(y);
    }
    let x1 = model.transition().eval(&DVector::from_element(1, cfg.true_x))?;
    Ok(model.measurement().eval(&x1)?[0])
}

pub fn weights(cfg: &Example1dConfig, model: &StateSpaceModel) -> Result<LossWeights, CliError> {
    Ok(LossWeights::new(
        nalgebra::DMatrix::from_element(1, 1, cfg.prior_var),
        model.r().clone(),
        model.q().clone(),
    )?)
}

fn point(x0: f64, x1: f64, y: f64, prior: &GaussianDensity, model: &StateSpaceModel, w: &LossWeights) -> PathPoint {
    let it = JointIterate::new(DVector::from_element(1, x0), DVector::from_element(1, x1)).expect("scalar iterate");
    let loss = evaluate_loss(&it, &DVector::from_element(1, y), prior, model, w).unwrap_or(f64::INFINITY);
    PathPoint { x0, x1, loss }
}

fn undamped_path(trace: &StepTrace) -> Vec<(f64, f64)> {
    let first = &trace.iterates[0];
    std::iter::once((first.prior_prev.mean()[0], first.predictive.mean()[0]))
        .chain(
            trace
                .iterates
                .iter()
                .map(|b| (b.smoothed_prev.mean()[0], b.posterior.mean()[0])),
        )
        .collect()
}

pub fn run(cfg: &Example1dConfig) -> Result<Example1d, CliError> {
    if cfg.grid_points < 2 || !(cfg.grid_max > cfg.grid_min) {
        return Err(CliError::Config(
            "example1d grid needs grid_max > grid_min and at least 2 points".into(),
        ));
    }
    let model = make_trig_model();
    let prior = GaussianDensity::scalar(cfg.prior_mean, cfg.prior_var)?;
    let y = measurement(cfg, &model)?;
    let w = weights(cfg, &model)?;
    let yv = DVector::from_element(1, y);

    let n = cfg.grid_points;
    let h = (cfg.grid_max - cfg.grid_min) / (n - 1) as f64;
    let axis: Vec<f64> = (0..n).map(|i| cfg.grid_min + h * i as f64).collect();
    let mut landscape = Vec::with_capacity(n * n);
    for &x0 in &axis {
        for &x1 in &axis {
            landscape.push(point(x0, x1, y, &prior, &model, &w).loss);
        }
    }

    let mut paths = Vec::new();
    for alg in ALGORITHMS {
        let coords = match alg {
            "ls-diekf" => {
                let icfg = IterationConfig {
                    max_iters: cfg.iterations,
                    ..IterationConfig::damped(Variant::Diekf)
                };
                let ls = LineSearchConfig::default();
                let (_, trace) = damped_dif_step(&prior, &yv, &model, &icfg, &ls)?;
                trace.joint_iterates.iter().map(|s| (s.prev[0], s.curr[0])).collect()
            }
            _ => {
                let variant = if alg == "iekf" { Variant::Iekf } else { Variant::Diekf };
                let icfg = IterationConfig {
                    max_iters: cfg.iterations,
                    ..IterationConfig::new(variant)
                };
                let (_, trace) = dif_step(&prior, &yv, &model, &icfg)?;
                undamped_path(&trace)
            }
        };
        paths.push(
            coords
                .into_iter()
                .map(|(a, b)| point(a, b, y, &prior, &model, &w))
                .collect(),
        );
    }
    Ok(Example1d {
        y,
        axis,
        landscape,
        paths,
    })
}

pub fn write(ex: &Example1d, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let n = ex.axis.len();
    let mut files = vec![write_csv(
        &dir.join("landscape.csv"),
        &LANDSCAPE_HEADER,
        (0..n * n).map(|k| {
            let p = ex.landscape_point(k / n, k % n);
            vec![num(p.x0), num(p.x1), num(p.loss)]
        }),
    )?];
    for (alg, path) in ALGORITHMS.iter().zip(&ex.paths) {
        files.push(write_csv(
            &dir.join(format!("iterates_{alg}.csv")),
            &PATH_HEADER,
            path.iter()
                .enumerate()
                .map(|(i, p)| vec![i.to_string(), num(p.x0), num(p.x1), num(p.loss)]),
        )?);
    }
    let min = ex.grid_min();
    let mut rows = vec![vec![
        "grid_min".to_string(),
        (n * n).to_string(),
        num(min.x0),
        num(min.x1),
        num(min.loss),
        num(min.loss),
        "false".to_string(),
    ]];
    for (alg, path) in ALGORITHMS.iter().zip(&ex.paths) {
        let last = path.last().expect("paths start with the initial point");
        let max = path.iter().map(|p| p.loss).fold(f64::NEG_INFINITY, f64::max);
        rows.push(vec![
            alg.to_string(),
            path.len().to_string(),
            num(last.x0),
            num(last.x1),
            num(last.loss),
            num(max),
            ex.left_grid(alg).to_string(),
        ]);
    }
    files.push(write_csv(&dir.join("summary.csv"), &SUMMARY_HEADER, rows)?);
    Ok(files)
}
