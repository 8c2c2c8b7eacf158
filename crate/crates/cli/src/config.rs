//! Flat `key = value` configuration with a fixed key registry.
//!
//! A file holds one assignment per line; `#` starts a comment. Values are
//! plain numbers or comma-separated lists. `--set key=value` overrides are
//! applied after the file, in order.

use std::fmt::Write as _;

use difilter::bench::{FilterSpec, TdoaSetup, TrackingSetup};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct IllustrateConfig {
    pub y: f64,
    pub prior_mean: f64,
    pub prior_var: f64,
    pub max_iters: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example1dConfig {
    pub true_x: f64,
    /// Measurement of `x_1`; `None` uses the noise-free `arctan(f(true_x))`.
    pub y: Option<f64>,
    pub prior_mean: f64,
    pub prior_var: f64,
    pub iterations: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackConfig {
    pub setup: TrackingSetup,
    pub q1_values: Vec<f64>,
    pub sigma_sq_values: Vec<f64>,
    pub mc_runs: usize,
    pub variants: Vec<FilterSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdoaConfig {
    pub setup: TdoaSetup,
    pub q1_values: Vec<f64>,
    pub q2_values: Vec<f64>,
    pub mc_runs: usize,
    pub variants: Vec<FilterSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    /// Sweep worker threads, 0 for all cores.
    pub jobs: usize,
    pub illustrate: IllustrateConfig,
    pub example1d: Example1dConfig,
    pub track: TrackConfig,
    pub tdoa: TdoaConfig,
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed of all random draws"),
    ("jobs", "sweep worker threads, 0 = all cores"),
    ("illustrate.y", "measurement of x_k in the cubic illustration"),
    ("illustrate.prior_mean", "mean of p(x_{k-1})"),
    ("illustrate.prior_var", "variance of p(x_{k-1})"),
    ("illustrate.max_iters", "DIEKF iteration budget"),
    ("illustrate.grid_min", "lower end of the posterior grid"),
    ("illustrate.grid_max", "upper end of the posterior grid"),
    ("illustrate.grid_points", "number of grid points"),
    ("example1d.true_x", "true state at time 0"),
    ("example1d.y", "measurement at time 1, or 'auto' for arctan(f(true_x))"),
    ("example1d.prior_mean", "prior mean at time 0"),
    ("example1d.prior_var", "prior variance at time 0"),
    ("example1d.iterations", "iterations of each algorithm"),
    ("example1d.grid_min", "lower end of the landscape grid, both axes"),
    ("example1d.grid_max", "upper end of the landscape grid, both axes"),
    ("example1d.grid_points", "landscape grid points per axis"),
    ("track.q1_values", "comma-separated q1 grid"),
    ("track.sigma_sq_values", "comma-separated measurement variance grid"),
    ("track.q2", "turn-rate noise intensity"),
    ("track.period", "sampling period T in seconds"),
    ("track.steps", "time steps per run"),
    ("track.x0", "true initial state px,vx,py,vy,omega (also the prior mean)"),
    ("track.prior_var", "diagonal of the prior covariance, 5 values"),
    ("track.mc_runs", "Monte-Carlo runs per configuration"),
    ("track.variants", "comma-separated filters, e.g. ekf,diekf,ls-diekf"),
    ("tdoa.q1_values", "comma-separated q1 grid"),
    ("tdoa.q2_values", "comma-separated q2 grid"),
    ("tdoa.period", "sampling period T in seconds"),
    ("tdoa.steps", "time steps per run"),
    ("tdoa.speed", "target speed in m/s"),
    ("tdoa.steps_per_circle", "steps per loop of the figure-eight"),
    ("tdoa.start", "crossing point of the figure-eight, x,y"),
    ("tdoa.prior_mean", "prior mean px,vx,py,vy,omega"),
    ("tdoa.prior_var", "diagonal of the prior covariance, 5 values"),
    ("tdoa.mic_sigma_sq", "range variance of each microphone, 4 values"),
    ("tdoa.threshold", "position RMSE above which a run diverged, meters"),
    ("tdoa.mc_runs", "Monte-Carlo runs per configuration"),
    ("tdoa.variants", "comma-separated filters"),
];

impl Default for Config {
    fn default() -> Self {
        let track_grid = TrackingSetup::full_grid(20);
        let tdoa_grid = TdoaSetup::full_grid(10);
        Self {
            seed: 0,
            jobs: 0,
            illustrate: IllustrateConfig {
                y: 2.0,
                prior_mean: 3.0,
                prior_var: 4.0,
                max_iters: 10,
                grid_min: -10.0,
                grid_max: 10.0,
                grid_points: 4001,
            },
            example1d: Example1dConfig {
                true_x: -3.2,
                y: None,
                prior_mean: -2.9,
                prior_var: 1.0,
                iterations: 10,
                grid_min: -6.0,
                grid_max: 2.0,
                grid_points: 401,
            },
            track: TrackConfig {
                setup: TrackingSetup::default(),
                q1_values: track_grid.q1_values,
                sigma_sq_values: track_grid.second_values,
                mc_runs: track_grid.mc_runs,
                variants: FilterSpec::parse_list("ekf,iekf,diekf,ukf,iukf,diukf").expect("valid list"),
            },
            tdoa: TdoaConfig {
                setup: TdoaSetup::default(),
                q1_values: tdoa_grid.q1_values,
                q2_values: tdoa_grid.second_values,
                mc_runs: tdoa_grid.mc_runs,
                variants: FilterSpec::parse_list("ekf,iekf,diekf,ls-diekf").expect("valid list"),
            },
        }
    }
}

fn bad(key: &str, value: &str, expected: &str) -> CliError {
    CliError::Config(format!("{key} = '{value}': expected {expected}"))
}

fn float(key: &str, v: &str) -> Result<f64, CliError> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(bad(key, v, "a finite number")),
    }
}

fn positive(key: &str, v: &str) -> Result<f64, CliError> {
    let x = float(key, v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(bad(key, v, "a positive number"))
    }
}

fn count(key: &str, v: &str) -> Result<usize, CliError> {
    match v.parse::<usize>() {
        Ok(x) if x >= 1 => Ok(x),
        _ => Err(bad(key, v, "a positive integer")),
    }
}

fn list(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    let out = v
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| positive(key, t))
        .collect::<Result<Vec<f64>, CliError>>()?;
    if out.is_empty() {
        return Err(bad(key, v, "a non-empty list of positive numbers"));
    }
    Ok(out)
}

fn array<const N: usize>(key: &str, v: &str, all_positive: bool) -> Result<[f64; N], CliError> {
    let parsed = v
        .split(',')
        .map(|t| {
            let t = t.trim();
            if all_positive {
                positive(key, t)
            } else {
                float(key, t)
            }
        })
        .collect::<Result<Vec<f64>, CliError>>()?;
    parsed
        .try_into()
        .map_err(|_| bad(key, v, &format!("{N} comma-separated numbers")))
}

fn filters(key: &str, v: &str) -> Result<Vec<FilterSpec>, CliError> {
    FilterSpec::parse_list(v).map_err(|e| CliError::Config(format!("{key}: {e}")))
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn join_filters(values: &[FilterSpec]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let v = v.trim();
        match key {
            "seed" => self.seed = v.parse().map_err(|_| bad(key, v, "an unsigned 64-bit integer"))?,
            "jobs" => self.jobs = v.parse().map_err(|_| bad(key, v, "a non-negative integer"))?,
            "illustrate.y" => self.illustrate.y = float(key, v)?,
            "illustrate.prior_mean" => self.illustrate.prior_mean = float(key, v)?,
            "illustrate.prior_var" => self.illustrate.prior_var = positive(key, v)?,
            "illustrate.max_iters" => self.illustrate.max_iters = count(key, v)?,
            "illustrate.grid_min" => self.illustrate.grid_min = float(key, v)?,
            "illustrate.grid_max" => self.illustrate.grid_max = float(key, v)?,
            "illustrate.grid_points" => self.illustrate.grid_points = count(key, v)?,
            "example1d.true_x" => self.example1d.true_x = float(key, v)?,
            "example1d.y" => {
                self.example1d.y = if v.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(float(key, v)?)
                }
            }
            "example1d.prior_mean" => self.example1d.prior_mean = float(key, v)?,
            "example1d.prior_var" => self.example1d.prior_var = positive(key, v)?,
            "example1d.iterations" => self.example1d.iterations = count(key, v)?,
            "example1d.grid_min" => self.example1d.grid_min = float(key, v)?,
            "example1d.grid_max" => self.example1d.grid_max = float(key, v)?,
            "example1d.grid_points" => self.example1d.grid_points = count(key, v)?,
            "track.q1_values" => self.track.q1_values = list(key, v)?,
            "track.sigma_sq_values" => self.track.sigma_sq_values = list(key, v)?,
            "track.q2" => self.track.setup.q2 = positive(key, v)?,
            "track.period" => self.track.setup.period = positive(key, v)?,
            "track.steps" => self.track.setup.steps = count(key, v)?,
            "track.x0" => self.track.setup.x0 = array(key, v, false)?,
            "track.prior_var" => self.track.setup.prior_var = array(key, v, true)?,
            "track.mc_runs" => self.track.mc_runs = count(key, v)?,
            "track.variants" => self.track.variants = filters(key, v)?,
            "tdoa.q1_values" => self.tdoa.q1_values = list(key, v)?,
            "tdoa.q2_values" => self.tdoa.q2_values = list(key, v)?,
            "tdoa.period" => self.tdoa.setup.period = positive(key, v)?,
            "tdoa.steps" => self.tdoa.setup.steps = count(key, v)?,
            "tdoa.speed" => self.tdoa.setup.speed = float(key, v)?,
            "tdoa.steps_per_circle" => self.tdoa.setup.steps_per_circle = count(key, v)?,
            "tdoa.start" => self.tdoa.setup.start = array(key, v, false)?,
            "tdoa.prior_mean" => self.tdoa.setup.prior_mean = array(key, v, false)?,
            "tdoa.prior_var" => self.tdoa.setup.prior_var = array(key, v, true)?,
            "tdoa.mic_sigma_sq" => self.tdoa.setup.tdoa.sigma_sq = array(key, v, true)?,
            "tdoa.threshold" => self.tdoa.setup.threshold = positive(key, v)?,
            "tdoa.mc_runs" => self.tdoa.mc_runs = count(key, v)?,
            "tdoa.variants" => self.tdoa.variants = filters(key, v)?,
            _ => {
                let valid: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
                return Err(CliError::Config(format!(
                    "unknown key '{key}'; valid keys: {}",
                    valid.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Current value of `key` in the same syntax `set` accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "seed" => self.seed.to_string(),
            "jobs" => self.jobs.to_string(),
            "illustrate.y" => self.illustrate.y.to_string(),
            "illustrate.prior_mean" => self.illustrate.prior_mean.to_string(),
            "illustrate.prior_var" => self.illustrate.prior_var.to_string(),
            "illustrate.max_iters" => self.illustrate.max_iters.to_string(),
            "illustrate.grid_min" => self.illustrate.grid_min.to_string(),
            "illustrate.grid_max" => self.illustrate.grid_max.to_string(),
            "illustrate.grid_points" => self.illustrate.grid_points.to_string(),
            "example1d.true_x" => self.example1d.true_x.to_string(),
            "example1d.y" => self.example1d.y.map_or_else(|| "auto".to_string(), |y| y.to_string()),
            "example1d.prior_mean" => self.example1d.prior_mean.to_string(),
            "example1d.prior_var" => self.example1d.prior_var.to_string(),
            "example1d.iterations" => self.example1d.iterations.to_string(),
            "example1d.grid_min" => self.example1d.grid_min.to_string(),
            "example1d.grid_max" => self.example1d.grid_max.to_string(),
            "example1d.grid_points" => self.example1d.grid_points.to_string(),
            "track.q1_values" => join(&self.track.q1_values),
            "track.sigma_sq_values" => join(&self.track.sigma_sq_values),
            "track.q2" => self.track.setup.q2.to_string(),
            "track.period" => self.track.setup.period.to_string(),
            "track.steps" => self.track.setup.steps.to_string(),
            "track.x0" => join(&self.track.setup.x0),
            "track.prior_var" => join(&self.track.setup.prior_var),
            "track.mc_runs" => self.track.mc_runs.to_string(),
            "track.variants" => join_filters(&self.track.variants),
            "tdoa.q1_values" => join(&self.tdoa.q1_values),
            "tdoa.q2_values" => join(&self.tdoa.q2_values),
            "tdoa.period" => self.tdoa.setup.period.to_string(),
            "tdoa.steps" => self.tdoa.setup.steps.to_string(),
            "tdoa.speed" => self.tdoa.setup.speed.to_string(),
            "tdoa.steps_per_circle" => self.tdoa.setup.steps_per_circle.to_string(),
            "tdoa.start" => join(&self.tdoa.setup.start),
            "tdoa.prior_mean" => join(&self.tdoa.setup.prior_mean),
            "tdoa.prior_var" => join(&self.tdoa.setup.prior_var),
            "tdoa.mic_sigma_sq" => join(&self.tdoa.setup.tdoa.sigma_sq),
            "tdoa.threshold" => self.tdoa.setup.threshold.to_string(),
            "tdoa.mc_runs" => self.tdoa.mc_runs.to_string(),
            "tdoa.variants" => join_filters(&self.tdoa.variants),
            _ => return None,
        };
        Some(s)
    }

    /// Applies a config file's contents. Errors name the offending line.
    pub fn apply_str(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key = value", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| CliError::Config(format!("{origin}:{}: {}", i + 1, e.message())))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set '{assignment}': expected key=value")))?;
        self.set(key.trim(), value)
    }

    /// Keys whose values differ from the defaults, rendered as a config file
    /// (all keys when `all` is set).
    pub fn render(&self, all: bool) -> String {
        let defaults = Config::default();
        let mut out = String::new();
        for (key, help) in KEYS {
            let value = self.get(key).expect("registry key");
            if all || defaults.get(key).as_deref() != Some(value.as_str()) {
                if all {
                    let _ = writeln!(out, "# {help}");
                }
                let _ = writeln!(out, "{key} = {value}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_keys_all_round_trip() {
        let cfg = Config::default();
        for (key, _) in KEYS {
            let value = cfg.get(key).unwrap_or_else(|| panic!("{key} has no getter"));
            let mut other = Config::default();
            other.set(key, &value).unwrap();
            assert_eq!(other, cfg, "{key}");
        }
    }

    #[test]
    fn rendered_config_reproduces_itself() {
        let mut cfg = Config::default();
        cfg.apply_override("track.q1_values=0.5,2").unwrap();
        cfg.apply_override("seed=9").unwrap();
        cfg.apply_override("example1d.y=-0.4").unwrap();
        let mut back = Config::default();
        back.apply_str(&cfg.render(true), "rendered").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(
            cfg.render(false),
            "seed = 9\nexample1d.y = -0.4\ntrack.q1_values = 0.5,2\n"
        );
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = Config::default().apply_override("track.q3=1").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown key 'track.q3'"), "{msg}");
        assert!(msg.contains("track.q2") && msg.contains("illustrate.y"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut cfg = Config::default();
        for assignment in [
            "track.mc_runs=0",
            "track.q1_values=1,-2",
            "track.x0=1,2,3",
            "illustrate.prior_var=0",
            "tdoa.variants=ekf,kf",
            "seed=-1",
            "illustrate.y=nan",
            "novalue",
        ] {
            assert!(cfg.apply_override(assignment).is_err(), "{assignment}");
        }
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn file_syntax() {
        let mut cfg = Config::default();
        cfg.apply_str("# comment\n\n seed = 4 # trailing\ntdoa.start = 1, 1.5\n", "f.conf")
            .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.tdoa.setup.start, [1.0, 1.5]);
        let err = cfg.apply_str("seed = 1\njobs\n", "f.conf").unwrap_err();
        assert!(err.to_string().contains("f.conf:2"), "{err}");
        let err = cfg.apply_str("bogus = 1\n", "f.conf").unwrap_err();
        assert!(err.to_string().contains("f.conf:1: unknown key 'bogus'"), "{err}");
    }
}
