//! Monte-Carlo harness: seeded simulation, RMSE, divergence counting and
//! parallel sweeps over noise configurations.
//!
//! Every (configuration, run) cell draws its own seed from
//! [`run_seed`], simulates once and runs every requested filter on the same
//! trajectory, so results do not depend on the filter list, the thread count
//! or the execution order.

use std::fmt;
use std::io;
use std::str::FromStr;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dif::{run_filter, IterationConfig, Variant};
use crate::error::{check_dim, FilterError, Result};
use crate::gaussian::{psd_sqrt, GaussianDensity};
use crate::models::{
    ct_transition, make_tdoa_model, make_tracking_model, CoordinatedTurnConfig, StateSpaceModel, TdoaConfig,
};

/// Where the true states come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    /// Sampled from the model's own transition and process noise.
    Simulated,
    /// Fixed states `x_1..x_steps`; only measurement noise is drawn.
    Trajectory(Vec<DVector<f64>>),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: StateSpaceModel,
    /// Filter prior for `x_0`.
    pub prior: GaussianDensity,
    pub true_x0: DVector<f64>,
    pub steps: usize,
    pub seed: u64,
    pub truth: Truth,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(FilterError::InvalidConfig("scenario needs at least one step".into()));
        }
        let n = self.model.state_dim();
        check_dim("scenario prior", n, self.prior.dim())?;
        check_dim("scenario initial state", n, self.true_x0.len())?;
        if let Truth::Trajectory(states) = &self.truth {
            check_dim("scenario trajectory length", self.steps, states.len())?;
            for s in states {
                check_dim("scenario trajectory state", n, s.len())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// `x_1..x_steps`
    pub states: Vec<DVector<f64>>,
    /// `y_1..y_steps`
    pub measurements: Vec<DVector<f64>>,
}

fn draw(rng: &mut ChaCha8Rng, sqrt: &nalgebra::DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_iterator(sqrt.ncols(), (0..sqrt.ncols()).map(|_| StandardNormal.sample(rng)));
    sqrt * z
}

/// Draws `x_k = f(x_{k−1}) + w`, `y_k = h(x_k) + v` with a ChaCha8 stream
/// seeded by `scenario.seed`; per step the process noise is drawn before the
/// measurement noise.
pub fn simulate(scenario: &Scenario) -> Result<Simulation> {
    scenario.validate()?;
    let model = &scenario.model;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let q_sqrt = psd_sqrt(model.q());
    let r_sqrt = psd_sqrt(model.r());
    let mut states = Vec::with_capacity(scenario.steps);
    let mut measurements = Vec::with_capacity(scenario.steps);
    let mut x = scenario.true_x0.clone();
    for k in 0..scenario.steps {
        x = match &scenario.truth {
            Truth::Simulated => model.transition().eval(&x)? + draw(&mut rng, &q_sqrt),
            Truth::Trajectory(states) => states[k].clone(),
        };
        let y = model.measurement().eval(&x)? + draw(&mut rng, &r_sqrt);
        states.push(x.clone());
        measurements.push(y);
    }
    Ok(Simulation { states, measurements })
}

fn mean_squared_error(estimates: &[DVector<f64>], truths: &[DVector<f64>], selector: &[usize]) -> Result<f64> {
    check_dim("rmse sequence length", truths.len(), estimates.len())?;
    if estimates.is_empty() || selector.is_empty() {
        return Err(FilterError::Precondition("rmse needs a non-empty sequence and selector".into()));
    }
    let mut total = 0.0;
    for (e, t) in estimates.iter().zip(truths) {
        check_dim("rmse state dimension", t.len(), e.len())?;
        for &i in selector {
            if i >= e.len() {
                return Err(FilterError::Precondition(format!(
                    "selector index {i} out of range for dimension {}",
                    e.len()
                )));
            }
            total += (e[i] - t[i]).powi(2);
        }
    }
    Ok(total / estimates.len() as f64)
}

/// Root of the time-averaged squared Euclidean error on `selector`.
pub fn rmse(estimates: &[DVector<f64>], truths: &[DVector<f64>], selector: &[usize]) -> Result<f64> {
    mean_squared_error(estimates, truths, selector).map(f64::sqrt)
}

/// A filter as run by the harness: a variant, optionally line-searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FilterSpec {
    pub variant: Variant,
    pub damped: bool,
}

impl FilterSpec {
    pub const ALL: [FilterSpec; 11] = [
        FilterSpec::plain(Variant::Ekf),
        FilterSpec::plain(Variant::Ukf),
        FilterSpec::plain(Variant::Iekf),
        FilterSpec::plain(Variant::Iukf),
        FilterSpec::plain(Variant::Iplf),
        FilterSpec::plain(Variant::Diekf),
        FilterSpec::plain(Variant::Diukf),
        FilterSpec::plain(Variant::Diplf),
        FilterSpec::line_searched(Variant::Diekf),
        FilterSpec::line_searched(Variant::Diukf),
        FilterSpec::line_searched(Variant::Diplf),
    ];

    pub const fn plain(variant: Variant) -> Self {
        Self { variant, damped: false }
    }

    pub const fn line_searched(variant: Variant) -> Self {
        Self { variant, damped: true }
    }

    pub fn iteration_config(&self) -> IterationConfig {
        if self.damped {
            IterationConfig::damped(self.variant)
        } else {
            IterationConfig::new(self.variant)
        }
    }

    /// Parses a comma-separated list such as `ekf,diekf,ls-diekf`.
    pub fn parse_list(s: &str) -> Result<Vec<FilterSpec>> {
        let list = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<FilterSpec>>>()?;
        if list.is_empty() {
            return Err(FilterError::InvalidConfig("empty filter list".into()));
        }
        Ok(list)
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.damped {
            write!(f, "ls-{}", self.variant)
        } else {
            write!(f, "{}", self.variant)
        }
    }
}

impl FromStr for FilterSpec {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self> {
        FilterSpec::ALL
            .into_iter()
            .find(|spec| spec.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<String> = FilterSpec::ALL.iter().map(ToString::to_string).collect();
                FilterError::InvalidConfig(format!("unknown filter '{s}', expected one of {}", names.join(", ")))
            })
    }
}

/// A scenario together with how its runs are scored.
#[derive(Debug, Clone)]
pub struct SweepCase {
    pub scenario: Scenario,
    /// Runs whose position RMSE exceeds this are diverged.
    pub threshold: f64,
    pub position: Vec<usize>,
    /// Empty when the state has no velocity components.
    pub velocity: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub q1_values: Vec<f64>,
    /// `q2` for the acoustic sweep, `σ²` for the tracking sweep.
    pub second_values: Vec<f64>,
    pub mc_runs: usize,
}

/// One noise configuration; ids enumerate `q1` in the outer loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub id: usize,
    pub q1: f64,
    pub second: f64,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.q1_values.is_empty() || self.second_values.is_empty() {
            return Err(FilterError::InvalidConfig("sweep grid lists must be non-empty".into()));
        }
        if self.mc_runs == 0 {
            return Err(FilterError::InvalidConfig("mc_runs must be at least 1".into()));
        }
        if let Some(v) = self
            .q1_values
            .iter()
            .chain(&self.second_values)
            .find(|v| !(v.is_finite() && **v > 0.0))
        {
            return Err(FilterError::InvalidConfig(format!("grid values must be positive, got {v}")));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::with_capacity(self.q1_values.len() * self.second_values.len());
        for &q1 in &self.q1_values {
            for &second in &self.second_values {
                out.push(SweepPoint {
                    id: out.len(),
                    q1,
                    second,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepOptions {
    pub master_seed: u64,
    /// Worker threads; 0 uses rayon's default.
    pub jobs: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `run` in configuration `config`.
pub fn run_seed(master: u64, config: usize, run: usize) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ splitmix64(config as u64));
    splitmix64(b ^ splitmix64((run as u64).wrapping_add(0xD1B5_4A32_D192_ED03)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub config_id: usize,
    pub q1: f64,
    pub q2_or_sigma_sq: f64,
    pub variant: String,
    /// Over non-diverged runs; empty when every run diverged.
    pub pos_rmse: Option<f64>,
    pub vel_rmse: Option<f64>,
    pub diverged: usize,
    pub total: usize,
}

impl SweepRecord {
    /// A configuration counts as diverged when more than half its runs do.
    pub fn config_diverged(&self) -> bool {
        2 * self.diverged > self.total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JsonFilter {
    variant: String,
    pos_rmse: Option<f64>,
    vel_rmse: Option<f64>,
    diverged: usize,
    total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JsonConfig {
    config_id: usize,
    q1: f64,
    q2_or_sigma_sq: f64,
    filters: Vec<JsonFilter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JsonResult {
    second_parameter: String,
    configs: Vec<JsonConfig>,
}

pub const CSV_HEADER: [&str; 8] = [
    "config_id",
    "q1",
    "q2_or_sigma_sq",
    "variant",
    "pos_rmse",
    "vel_rmse",
    "diverged",
    "total",
];

/// Per-(configuration, filter) aggregates, ordered by configuration then by
/// the requested filter order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Name of the second grid axis, `q2` or `sigma_sq`.
    pub second_parameter: String,
    pub records: Vec<SweepRecord>,
}

fn csv_error(e: csv::Error) -> FilterError {
    FilterError::InvalidConfig(format!("csv: {e}"))
}

impl SweepResult {
    pub fn record(&self, config_id: usize, filter: &str) -> Option<&SweepRecord> {
        self.records
            .iter()
            .find(|r| r.config_id == config_id && r.variant == filter)
    }

    pub fn filters(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.variant) {
                out.push(r.variant.clone());
            }
        }
        out
    }

    pub fn config_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.records.iter().map(|r| r.config_id).collect();
        ids.dedup();
        ids
    }

    pub fn diverged_configs(&self, filter: &str) -> usize {
        self.records
            .iter()
            .filter(|r| r.variant == filter && r.config_diverged())
            .count()
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(CSV_HEADER).map_err(csv_error)?;
        for r in &self.records {
            wtr.serialize(r).map_err(csv_error)?;
        }
        wtr.flush()
            .map_err(|e| FilterError::InvalidConfig(format!("csv: {e}")))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    pub fn from_csv_str(second_parameter: &str, s: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(s.as_bytes());
        let header = rdr.headers().map_err(csv_error)?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(FilterError::InvalidConfig(format!(
                "unexpected csv header {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let records = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<SweepRecord>, _>>()
            .map_err(csv_error)?;
        Ok(Self {
            second_parameter: second_parameter.to_string(),
            records,
        })
    }

    pub fn to_json_string(&self) -> String {
        let mut configs: Vec<JsonConfig> = Vec::new();
        for r in &self.records {
            if configs.last().map(|c| c.config_id) != Some(r.config_id) {
                configs.push(JsonConfig {
                    config_id: r.config_id,
                    q1: r.q1,
                    q2_or_sigma_sq: r.q2_or_sigma_sq,
                    filters: Vec::new(),
                });
            }
            configs.last_mut().expect("pushed above").filters.push(JsonFilter {
                variant: r.variant.clone(),
                pos_rmse: r.pos_rmse,
                vel_rmse: r.vel_rmse,
                diverged: r.diverged,
                total: r.total,
            });
        }
        let doc = JsonResult {
            second_parameter: self.second_parameter.clone(),
            configs,
        };
        serde_json::to_string_pretty(&doc).expect("plain data serializes") + "\n"
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: JsonResult =
            serde_json::from_str(s).map_err(|e| FilterError::InvalidConfig(format!("json: {e}")))?;
        let mut records = Vec::new();
        for c in doc.configs {
            for f in c.filters {
                records.push(SweepRecord {
                    config_id: c.config_id,
                    q1: c.q1,
                    q2_or_sigma_sq: c.q2_or_sigma_sq,
                    variant: f.variant,
                    pos_rmse: f.pos_rmse,
                    vel_rmse: f.vel_rmse,
                    diverged: f.diverged,
                    total: f.total,
                });
            }
        }
        Ok(Self {
            second_parameter: doc.second_parameter,
            records,
        })
    }
}

/// Mean squared position and velocity errors of one run, `None` if diverged.
type RunScore = Option<(f64, Option<f64>)>;

fn score_run(case: &SweepCase, sim: &Simulation, filter: &FilterSpec) -> RunScore {
    let scenario = &case.scenario;
    let beliefs = run_filter(
        &scenario.prior,
        &sim.measurements,
        &scenario.model,
        &filter.iteration_config(),
    )
    .ok()?;
    let estimates: Vec<DVector<f64>> = beliefs.into_iter().map(|b| b.posterior.mean().clone()).collect();
    if estimates.iter().any(|e| e.iter().any(|v| !v.is_finite())) {
        return None;
    }
    let pos = mean_squared_error(&estimates, &sim.states, &case.position).ok()?;
    if !(pos.sqrt() <= case.threshold) {
        return None;
    }
    let vel = if case.velocity.is_empty() {
        None
    } else {
        Some(mean_squared_error(&estimates, &sim.states, &case.velocity).ok()?)
    };
    Some((pos, vel))
}

fn aggregate(point: &SweepPoint, filter: &FilterSpec, scores: &[&RunScore]) -> SweepRecord {
    let ok: Vec<(f64, Option<f64>)> = scores.iter().filter_map(|s| **s).collect();
    let n = ok.len() as f64;
    let pos_rmse = (!ok.is_empty()).then(|| (ok.iter().map(|s| s.0).sum::<f64>() / n).sqrt());
    let vel_rmse = if ok.is_empty() || ok.iter().any(|s| s.1.is_none()) {
        None
    } else {
        Some((ok.iter().filter_map(|s| s.1).sum::<f64>() / n).sqrt())
    };
    SweepRecord {
        config_id: point.id,
        q1: point.q1,
        q2_or_sigma_sq: point.second,
        variant: filter.to_string(),
        pos_rmse,
        vel_rmse,
        diverged: scores.len() - ok.len(),
        total: scores.len(),
    }
}

/// Runs every filter on `grid.mc_runs` simulations per configuration.
/// Filter failures are booked as diverged runs; only invalid configurations
/// abort the sweep.
pub fn run_sweep<F>(
    template: F,
    second_parameter: &str,
    grid: &SweepGrid,
    filters: &[FilterSpec],
    opts: &SweepOptions,
) -> Result<SweepResult>
where
    F: Fn(&SweepPoint) -> Result<SweepCase> + Sync,
{
    grid.validate()?;
    if filters.is_empty() {
        return Err(FilterError::InvalidConfig("no filters requested".into()));
    }
    let points = grid.points();
    let cases = points
        .iter()
        .map(|p| {
            let case = template(p)?;
            case.scenario.validate()?;
            Ok(case)
        })
        .collect::<Result<Vec<SweepCase>>>()?;
    let cells: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|c| (0..grid.mc_runs).map(move |r| (c, r)))
        .collect();

    let work = || -> Vec<Vec<RunScore>> {
        cells
            .par_iter()
            .map(|&(c, r)| {
                let mut scenario = cases[c].scenario.clone();
                scenario.seed = run_seed(opts.master_seed, c, r);
                let case = SweepCase {
                    scenario,
                    ..cases[c].clone()
                };
                match simulate(&case.scenario) {
                    Ok(sim) => filters.iter().map(|f| score_run(&case, &sim, f)).collect(),
                    Err(_) => vec![None; filters.len()],
                }
            })
            .collect()
    };
    let scores = if opts.jobs == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| FilterError::InvalidConfig(format!("thread pool: {e}")))?
            .install(work)
    };

    let mut records = Vec::with_capacity(points.len() * filters.len());
    for (c, point) in points.iter().enumerate() {
        let runs = &scores[c * grid.mc_runs..(c + 1) * grid.mc_runs];
        for (fi, filter) in filters.iter().enumerate() {
            let column: Vec<&RunScore> = runs.iter().map(|r| &r[fi]).collect();
            records.push(aggregate(point, filter, &column));
        }
    }
    Ok(SweepResult {
        second_parameter: second_parameter.to_string(),
        records,
    })
}

/// Coordinated-turn target with noisy Cartesian position measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSetup {
    pub period: f64,
    pub q2: f64,
    pub steps: usize,
    pub x0: [f64; 5],
    /// Diagonal of the prior covariance; the prior mean is `x0`.
    pub prior_var: [f64; 5],
}

impl Default for TrackingSetup {
    fn default() -> Self {
        Self {
            period: 1.0,
            q2: 1e-2,
            steps: 100,
            x0: [0.0, 10.0, 0.0, 10.0, 0.1],
            prior_var: [1.0, 1.0, 1.0, 1.0, 1e-2],
        }
    }
}

impl TrackingSetup {
    pub const POSITION: [usize; 2] = [0, 2];
    pub const VELOCITY: [usize; 2] = [1, 3];

    /// Simulated truth and filter share `Q(q1, q2)` and `R = σ² I`; the
    /// divergence threshold is `σ`.
    pub fn case(&self, q1: f64, sigma_sq: f64) -> Result<SweepCase> {
        let ct = CoordinatedTurnConfig {
            period: self.period,
            q1,
            q2: self.q2,
        };
        let model = make_tracking_model(&ct, sigma_sq)?;
        let x0 = DVector::from_column_slice(&self.x0);
        let prior = GaussianDensity::new(
            x0.clone(),
            nalgebra::DMatrix::from_diagonal(&DVector::from_column_slice(&self.prior_var)),
        )?;
        Ok(SweepCase {
            scenario: Scenario {
                model,
                prior,
                true_x0: x0,
                steps: self.steps,
                seed: 0,
                truth: Truth::Simulated,
            },
            threshold: sigma_sq.sqrt(),
            position: Self::POSITION.to_vec(),
            velocity: Self::VELOCITY.to_vec(),
        })
    }

    /// `q1 ∈ {1e-3, …, 10}` × `σ² ∈ {1e-2, …, 1e2}`.
    pub fn full_grid(mc_runs: usize) -> SweepGrid {
        SweepGrid {
            q1_values: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0],
            second_values: vec![1e-2, 1e-1, 1.0, 10.0, 1e2],
            mc_runs,
        }
    }

    pub fn desk_grid(mc_runs: usize) -> SweepGrid {
        SweepGrid {
            q1_values: vec![1e-3, 1e-1, 10.0],
            second_values: vec![1e-2, 1.0, 1e2],
            mc_runs,
        }
    }
}

/// Acoustic localization of a target driving a figure-eight inside a
/// microphone array.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaSetup {
    pub period: f64,
    pub steps: usize,
    pub speed: f64,
    /// Crossing point of the figure-eight, where the target starts heading +x.
    pub start: [f64; 2],
    /// Steps per full circle; the turn direction flips after each one.
    pub steps_per_circle: usize,
    pub tdoa: TdoaConfig,
    /// The filter does not know the initial state: by default the prior
    /// sits 1 m off in each axis with zero velocity and turn rate.
    pub prior_mean: [f64; 5],
    /// Diagonal of the prior covariance.
    pub prior_var: [f64; 5],
    pub threshold: f64,
}

impl Default for TdoaSetup {
    fn default() -> Self {
        Self {
            period: 0.5,
            steps: 100,
            speed: 1.0,
            start: [2.0, 2.0],
            steps_per_circle: 10,
            tdoa: TdoaConfig::default(),
            prior_mean: [3.0, 0.0, 1.0, 0.0, 0.0],
            prior_var: [1.0; 5],
            threshold: 1.0,
        }
    }
}

impl TdoaSetup {
    pub const POSITION: [usize; 2] = [0, 2];
    pub const VELOCITY: [usize; 2] = [1, 3];

    pub fn turn_rate(&self) -> f64 {
        2.0 * std::f64::consts::PI / (self.steps_per_circle as f64 * self.period)
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_column_slice(&[self.start[0], self.speed, self.start[1], 0.0, self.turn_rate()])
    }

    /// Noise-free coordinated-turn rollout `x_1..x_steps`.
    pub fn trajectory(&self) -> Result<Vec<DVector<f64>>> {
        if self.steps_per_circle == 0 {
            return Err(FilterError::InvalidConfig("steps_per_circle must be positive".into()));
        }
        let ct = CoordinatedTurnConfig {
            period: self.period,
            q1: 0.0,
            q2: 0.0,
        };
        let mut x = self.x0();
        let mut out = Vec::with_capacity(self.steps);
        for k in 1..=self.steps {
            x = ct_transition(&x, &ct);
            if k % self.steps_per_circle == 0 {
                x[4] = -x[4];
            }
            out.push(x.clone());
        }
        Ok(out)
    }

    pub fn case(&self, q1: f64, q2: f64) -> Result<SweepCase> {
        let ct = CoordinatedTurnConfig {
            period: self.period,
            q1,
            q2,
        };
        let model = make_tdoa_model(&ct, &self.tdoa)?;
        let x0 = self.x0();
        let prior = GaussianDensity::new(
            DVector::from_column_slice(&self.prior_mean),
            nalgebra::DMatrix::from_diagonal(&DVector::from_column_slice(&self.prior_var)),
        )?;
        Ok(SweepCase {
            scenario: Scenario {
                model,
                prior,
                true_x0: x0,
                steps: self.steps,
                seed: 0,
                truth: Truth::Trajectory(self.trajectory()?),
            },
            threshold: self.threshold,
            position: Self::POSITION.to_vec(),
            velocity: Self::VELOCITY.to_vec(),
        })
    }

    /// `q1 = 10^j`, `j = −6..0` × `q2 = 10^l`, `l = −5..0`.
    pub fn full_grid(mc_runs: usize) -> SweepGrid {
        SweepGrid {
            q1_values: (-6..=0).map(|j| 10f64.powi(j)).collect(),
            second_values: (-5..=0).map(|l| 10f64.powi(l)).collect(),
            mc_runs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::AffineMap;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn scalar_affine(q: f64, r: f64) -> StateSpaceModel {
        StateSpaceModel::with_psd_noise(
            Arc::new(AffineMap::new(DMatrix::from_element(1, 1, 0.95), v(&[0.1])).unwrap()),
            Arc::new(AffineMap::new(DMatrix::from_element(1, 1, 2.0), v(&[0.0])).unwrap()),
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, r),
        )
        .unwrap()
    }

    fn scenario(model: StateSpaceModel, steps: usize, seed: u64) -> Scenario {
        Scenario {
            model,
            prior: GaussianDensity::scalar(0.0, 1.0).unwrap(),
            true_x0: v(&[0.5]),
            steps,
            seed,
            truth: Truth::Simulated,
        }
    }

    #[test]
    fn noiseless_simulation_is_a_rollout() {
        let sim = simulate(&scenario(scalar_affine(0.0, 0.0), 5, 3)).unwrap();
        let mut x = 0.5;
        for (s, y) in sim.states.iter().zip(&sim.measurements) {
            x = 0.95 * x + 0.1;
            assert_eq!(s[0], x);
            assert_eq!(y[0], 2.0 * x);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let a = simulate(&scenario(scalar_affine(0.3, 0.2), 50, 9)).unwrap();
        let b = simulate(&scenario(scalar_affine(0.3, 0.2), 50, 9)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&scenario(scalar_affine(0.3, 0.2), 50, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn process_noise_sample_covariance() {
        // x_{k} = 0·x + w gives independent draws of w.
        let model = StateSpaceModel::with_psd_noise(
            Arc::new(AffineMap::new(DMatrix::zeros(1, 1), v(&[0.0])).unwrap()),
            Arc::new(AffineMap::identity(1)),
            DMatrix::from_element(1, 1, 0.7),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let sim = simulate(&scenario(model, 100_000, 1)).unwrap();
        let n = sim.states.len() as f64;
        let mean = sim.states.iter().map(|s| s[0]).sum::<f64>() / n;
        let var = sim.states.iter().map(|s| (s[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.7).abs() < 0.02 * 0.7, "{var}");
    }

    #[test]
    fn rmse_examples() {
        let truths = vec![v(&[1.0, 2.0]); 4];
        assert_eq!(rmse(&truths, &truths, &[0, 1]).unwrap(), 0.0);
        let shifted: Vec<_> = truths.iter().map(|t| t + v(&[3.0, 0.0])).collect();
        assert_abs_diff_eq!(rmse(&shifted, &truths, &[0]).unwrap(), 3.0, epsilon = 1e-15);
        let errs = [1.0, 1.0, 1.0, 13f64.sqrt()];
        let est: Vec<_> = truths.iter().zip(errs).map(|(t, e)| t + v(&[e, 0.0])).collect();
        assert_abs_diff_eq!(rmse(&est, &truths, &[0, 1]).unwrap(), 2.0, epsilon = 1e-15);
        assert!(rmse(&est[..3], &truths, &[0]).is_err());
        assert!(rmse(&est, &truths, &[5]).is_err());
    }

    #[test]
    fn filter_names_round_trip() {
        for f in FilterSpec::ALL {
            assert_eq!(f.to_string().parse::<FilterSpec>().unwrap(), f);
        }
        assert_eq!(FilterSpec::parse_list("ekf, ls-diekf").unwrap().len(), 2);
        assert!(FilterSpec::parse_list("ekf,foo").is_err());
        assert!(FilterSpec::parse_list("").is_err());
    }

    #[test]
    fn seeds_differ_across_cells() {
        let mut seen = std::collections::HashSet::new();
        for c in 0..20 {
            for r in 0..20 {
                assert!(seen.insert(run_seed(7, c, r)));
            }
        }
        assert_ne!(run_seed(1, 0, 0), run_seed(2, 0, 0));
    }

    fn affine_template(p: &SweepPoint) -> Result<SweepCase> {
        Ok(SweepCase {
            scenario: scenario(scalar_affine(p.q1, p.second), 30, 0),
            threshold: f64::INFINITY,
            position: vec![0],
            velocity: vec![],
        })
    }

    fn small_grid(mc_runs: usize) -> SweepGrid {
        SweepGrid {
            q1_values: vec![0.1, 1.0],
            second_values: vec![0.5],
            mc_runs,
        }
    }

    #[test]
    fn affine_sweep_collapses_variants() {
        let filters: Vec<FilterSpec> = FilterSpec::ALL.to_vec();
        let res = run_sweep(affine_template, "sigma_sq", &small_grid(3), &filters, &SweepOptions::default()).unwrap();
        for id in res.config_ids() {
            let base = res.record(id, "ekf").unwrap().pos_rmse.unwrap();
            for f in &filters {
                let r = res.record(id, &f.to_string()).unwrap();
                assert!((r.pos_rmse.unwrap() - base).abs() <= 1e-9, "{f}");
                assert_eq!(r.diverged, 0);
                assert_eq!(r.vel_rmse, None);
            }
        }
    }

    #[test]
    fn sweep_is_reproducible_and_jobs_invariant() {
        let filters = FilterSpec::parse_list("ekf,diekf").unwrap();
        let run = |jobs| {
            run_sweep(
                affine_template,
                "sigma_sq",
                &small_grid(4),
                &filters,
                &SweepOptions { master_seed: 5, jobs },
            )
            .unwrap()
        };
        let a = run(1);
        assert_eq!(a, run(1));
        assert_eq!(a, run(3));
        // Adding a filter leaves the others untouched.
        let more = run_sweep(
            affine_template,
            "sigma_sq",
            &small_grid(4),
            &FilterSpec::parse_list("ukf,ekf,diekf").unwrap(),
            &SweepOptions { master_seed: 5, jobs: 2 },
        )
        .unwrap();
        for r in &a.records {
            assert_eq!(more.record(r.config_id, &r.variant), Some(r));
        }
    }

    #[test]
    fn serialization_round_trips() {
        let filters = FilterSpec::parse_list("ekf,iekf").unwrap();
        let mut res = run_sweep(affine_template, "q2", &small_grid(2), &filters, &SweepOptions::default()).unwrap();
        res.records[1].pos_rmse = None;
        res.records[1].diverged = 2;
        let csv = res.to_csv_string().unwrap();
        assert!(csv.starts_with("config_id,q1,q2_or_sigma_sq,variant,pos_rmse,vel_rmse,diverged,total\n"));
        assert_eq!(SweepResult::from_csv_str("q2", &csv).unwrap(), res);
        assert_eq!(SweepResult::from_json_str(&res.to_json_string()).unwrap(), res);
    }

    #[test]
    fn invalid_sweeps_are_rejected() {
        let f = FilterSpec::parse_list("ekf").unwrap();
        let mut g = small_grid(1);
        g.mc_runs = 0;
        assert!(run_sweep(affine_template, "q2", &g, &f, &SweepOptions::default()).is_err());
        assert!(run_sweep(affine_template, "q2", &small_grid(1), &[], &SweepOptions::default()).is_err());
        let mut g = small_grid(1);
        g.q1_values.clear();
        assert!(run_sweep(affine_template, "q2", &g, &f, &SweepOptions::default()).is_err());
    }

    #[test]
    fn diverged_runs_are_counted() {
        let template = |p: &SweepPoint| {
            let mut c = affine_template(p)?;
            c.threshold = 0.0;
            Ok(c)
        };
        let res = run_sweep(template, "q2", &small_grid(3), &[FilterSpec::plain(Variant::Ekf)], &SweepOptions::default())
            .unwrap();
        for r in &res.records {
            assert_eq!((r.diverged, r.total, r.pos_rmse), (3, 3, None));
            assert!(r.config_diverged());
        }
        assert_eq!(res.diverged_configs("ekf"), 2);
    }

    #[test]
    fn tdoa_trajectory_is_a_closed_figure_eight() {
        let setup = TdoaSetup::default();
        let traj = setup.trajectory().unwrap();
        assert_eq!(traj.len(), 100);
        let end = &traj[99];
        assert_abs_diff_eq!(end[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(end[2], 2.0, epsilon = 1e-9);
        let mid = &traj[setup.steps_per_circle - 1];
        assert_abs_diff_eq!(mid[0], 2.0, epsilon = 1e-9);
        for s in &traj {
            assert!(s[0] > 0.3 && s[0] < 3.7 && s[2] > 0.3 && s[2] < 3.7, "{s}");
            assert_abs_diff_eq!(s[1].hypot(s[3]), setup.speed, epsilon = 1e-12);
        }
    }

    #[test]
    fn setups_build_valid_cases() {
        let c = TrackingSetup::default().case(1e-1, 1.0).unwrap();
        assert_eq!(c.threshold, 1.0);
        c.scenario.validate().unwrap();
        let c = TdoaSetup::default().case(1e-3, 1e-2).unwrap();
        c.scenario.validate().unwrap();
        assert_eq!(TdoaSetup::full_grid(1).points().len(), 42);
        assert_eq!(TrackingSetup::full_grid(1).points().len(), 25);
        assert!(TrackingSetup::default().case(-1.0, 1.0).is_err());
    }
}
