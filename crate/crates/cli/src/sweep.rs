//! Tracking and acoustic Monte-Carlo sweeps with a markdown summary laid out
//! as `q1` rows by second-parameter columns.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use difilter::bench::{run_sweep, FilterSpec, SweepGrid, SweepOptions, SweepResult};
use difilter::Variant;

use crate::config::{TdoaConfig, TrackConfig};
use crate::error::CliError;
use crate::output::write_text;

pub fn track(cfg: &TrackConfig, opts: &SweepOptions) -> Result<SweepResult, CliError> {
    let grid = SweepGrid {
        q1_values: cfg.q1_values.clone(),
        second_values: cfg.sigma_sq_values.clone(),
        mc_runs: cfg.mc_runs,
    };
    let setup = cfg.setup.clone();
    Ok(run_sweep(
        |p| setup.case(p.q1, p.second),
        "sigma_sq",
        &grid,
        &cfg.variants,
        opts,
    )?)
}

pub fn tdoa(cfg: &TdoaConfig, opts: &SweepOptions) -> Result<SweepResult, CliError> {
    let grid = SweepGrid {
        q1_values: cfg.q1_values.clone(),
        second_values: cfg.q2_values.clone(),
        mc_runs: cfg.mc_runs,
    };
    let setup = cfg.setup.clone();
    Ok(run_sweep(|p| setup.case(p.q1, p.second), "q2", &grid, &cfg.variants, opts)?)
}

/// The non-iterated filter an iterated one is compared against.
pub fn baseline(filter: &FilterSpec) -> Option<FilterSpec> {
    let base = if filter.variant.is_analytical() {
        Variant::Ekf
    } else {
        Variant::Ukf
    };
    let base = FilterSpec::plain(base);
    (base != *filter).then_some(base)
}

fn fmt_value(v: f64) -> String {
    format!("{v:e}")
}

fn ratio_table(out: &mut String, result: &SweepResult, filter: &str, base: &str, velocity: bool) {
    let ids = result.config_ids();
    let mut q1s: Vec<f64> = Vec::new();
    let mut seconds: Vec<f64> = Vec::new();
    for r in &result.records {
        if !q1s.contains(&r.q1) {
            q1s.push(r.q1);
        }
        if !seconds.contains(&r.q2_or_sigma_sq) {
            seconds.push(r.q2_or_sigma_sq);
        }
    }
    let what = if velocity { "Velocity" } else { "Position" };
    let _ = writeln!(out, "### {what} RMSE, {filter} / {base}\n");
    let _ = write!(out, "| q1 \\ {} |", result.second_parameter);
    for s in &seconds {
        let _ = write!(out, " {} |", fmt_value(*s));
    }
    let _ = write!(out, "\n|---|");
    for _ in &seconds {
        let _ = write!(out, "---|");
    }
    out.push('\n');
    for q1 in &q1s {
        let _ = write!(out, "| {} |", fmt_value(*q1));
        for s in &seconds {
            let id = ids.iter().copied().find(|&id| {
                result
                    .record(id, filter)
                    .is_some_and(|r| r.q1 == *q1 && r.q2_or_sigma_sq == *s)
            });
            let cell = match id.and_then(|id| Some((result.record(id, filter)?, result.record(id, base)?))) {
                None => "n/a".to_string(),
                Some((it, bl)) => {
                    let pick = |r: &difilter::bench::SweepRecord| if velocity { r.vel_rmse } else { r.pos_rmse };
                    match (it.config_diverged(), bl.config_diverged(), pick(it), pick(bl)) {
                        (true, true, ..) => "both div".to_string(),
                        (true, false, ..) => "div".to_string(),
                        (false, true, ..) => "base div".to_string(),
                        (false, false, Some(a), Some(b)) => format!("{:.3}", a / b),
                        _ => "n/a".to_string(),
                    }
                }
            };
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out.push('\n');
}

/// Diverged-configuration counts followed by iterated-over-baseline ratio
/// matrices. A configuration is diverged when most of its runs are.
pub fn summary_markdown(title: &str, result: &SweepResult, mc_runs: usize, seed: u64) -> String {
    let mut out = String::new();
    let total = result.config_ids().len();
    let _ = writeln!(out, "# {title}\n");
    let _ = writeln!(
        out,
        "{total} configurations, {mc_runs} runs each, master seed {seed}. A configuration counts as diverged for a filter when more than half of its runs diverge.\n"
    );
    let _ = writeln!(out, "| filter | diverged configurations |\n|---|---|");
    let filters = result.filters();
    for f in &filters {
        let _ = writeln!(out, "| {f} | {}/{total} |", result.diverged_configs(f));
    }
    out.push('\n');
    for f in &filters {
        let Ok(spec) = f.parse::<FilterSpec>() else { continue };
        let Some(base) = baseline(&spec).map(|b| b.to_string()) else {
            continue;
        };
        if !filters.contains(&base) {
            continue;
        }
        ratio_table(&mut out, result, f, &base, false);
        if result.records.iter().any(|r| r.vel_rmse.is_some()) {
            ratio_table(&mut out, result, f, &base, true);
        }
    }
    out
}

pub fn write(result: &SweepResult, summary: &str, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let csv = result.to_csv_string()?;
    Ok(vec![
        write_text(&dir.join("results.csv"), &csv)?,
        write_text(&dir.join("results.json"), &result.to_json_string())?,
        write_text(&dir.join("summary.md"), summary)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use difilter::bench::SweepRecord;

    fn rec(id: usize, q1: f64, s: f64, v: &str, pos: Option<f64>, div: usize) -> SweepRecord {
        SweepRecord {
            config_id: id,
            q1,
            q2_or_sigma_sq: s,
            variant: v.into(),
            pos_rmse: pos,
            vel_rmse: pos.map(|p| 2.0 * p),
            diverged: div,
            total: 4,
        }
    }

    #[test]
    fn baselines() {
        let b = |s: &str| baseline(&s.parse().unwrap()).map(|f| f.to_string());
        assert_eq!(b("ekf"), None);
        assert_eq!(b("ukf"), None);
        assert_eq!(b("diekf").as_deref(), Some("ekf"));
        assert_eq!(b("ls-diekf").as_deref(), Some("ekf"));
        assert_eq!(b("iplf").as_deref(), Some("ukf"));
        assert_eq!(b("ls-diukf").as_deref(), Some("ukf"));
    }

    #[test]
    fn summary_layout() {
        let result = SweepResult {
            second_parameter: "sigma_sq".into(),
            records: vec![
                rec(0, 0.1, 1.0, "ekf", Some(2.0), 0),
                rec(0, 0.1, 1.0, "diekf", Some(1.0), 1),
                rec(1, 0.1, 10.0, "ekf", None, 4),
                rec(1, 0.1, 10.0, "diekf", Some(1.0), 0),
            ],
        };
        let md = summary_markdown("Tracking", &result, 4, 7);
        assert!(md.contains("| ekf | 1/2 |"), "{md}");
        assert!(md.contains("| diekf | 0/2 |"), "{md}");
        assert!(md.contains("### Position RMSE, diekf / ekf"), "{md}");
        assert!(md.contains("| 1e-1 | 0.500 | base div |"), "{md}");
        assert!(md.contains("### Velocity RMSE, diekf / ekf"), "{md}");
    }
}
