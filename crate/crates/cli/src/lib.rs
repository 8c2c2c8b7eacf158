//! The `dif` command line: the cubic illustration, the one-dimensional
//! damping demo, the tracking and acoustic Monte-Carlo sweeps, the oracle
//! suites and the golden fixtures. Every command writes plain CSV/markdown
//! files and is deterministic given its configuration and seed.

pub mod config;
pub mod error;
pub mod example1d;
pub mod fixtures;
pub mod illustrate;
pub mod output;
pub mod sweep;
pub mod verify;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use difilter::bench::{FilterSpec, SweepOptions};

use crate::config::{Config, KEYS};
use crate::error::CliError;
use crate::output::{ensure_dir, write_text};

#[derive(Debug, Parser)]
#[command(name = "dif", version, about = "Dynamically iterated filter experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat key = value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory [default: out/<command>, fixtures for `fixtures`].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Sweep worker threads, 0 for all cores.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Comma-separated filters for the sweeps, e.g. ekf,diekf,ls-diekf.
    #[arg(long, global = true, value_name = "LIST")]
    pub variants: Option<String>,
    /// Monte-Carlo runs per sweep configuration.
    #[arg(long = "mc-runs", global = true, value_name = "N")]
    pub mc_runs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// DIEKF densities on the cubic model against a dense-grid posterior.
    Illustrate,
    /// Loss landscape and IEKF/DIEKF/LS-DIEKF iterates on the trigonometric model.
    Example1d,
    /// Coordinated-turn tracking sweep over q1 and the measurement variance.
    TrackSweep,
    /// Acoustic localization sweep over q1 and q2.
    TdoaSweep,
    /// Run the oracle suites; exit 2 on the first failing property.
    Verify {
        #[arg(long, hide = true, value_name = "FAULT")]
        inject_fault: Option<String>,
    },
    /// Regenerate the golden fixtures, or compare against them with --check.
    Fixtures {
        #[arg(long)]
        check: bool,
    },
    /// List every configuration key with its current value.
    Keys,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Illustrate => "illustrate",
            Command::Example1d => "example1d",
            Command::TrackSweep => "track-sweep",
            Command::TdoaSweep => "tdoa-sweep",
            Command::Verify { .. } => "verify",
            Command::Fixtures { .. } => "fixtures",
            Command::Keys => "keys",
        }
    }

    /// Registry prefix of the keys this command reads.
    fn section(&self) -> Option<&'static str> {
        match self {
            Command::Illustrate => Some("illustrate."),
            Command::Example1d => Some("example1d."),
            Command::TrackSweep => Some("track."),
            Command::TdoaSweep => Some("tdoa."),
            _ => None,
        }
    }

    fn is_sweep(&self) -> bool {
        matches!(self, Command::TrackSweep | Command::TdoaSweep)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "dif {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}

/// Resolves defaults, the config file, the overrides and the flags, in that
/// order.
pub fn resolve_config(cli: &Cli) -> Result<Config, CliError> {
    let c = &cli.common;
    let mut cfg = Config::default();
    if let Some(path) = &c.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        cfg.apply_str(&text, &path.display().to_string())?;
    }
    for o in &c.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = c.jobs {
        cfg.jobs = jobs;
    }
    if c.variants.is_some() || c.mc_runs.is_some() {
        if !cli.command.is_sweep() {
            return Err(CliError::Usage(
                "--variants and --mc-runs apply to track-sweep and tdoa-sweep only".into(),
            ));
        }
        let section = cli.command.section().expect("sweeps have a section");
        if let Some(v) = &c.variants {
            cfg.set(&format!("{section}variants"), v)?;
        }
        if let Some(n) = c.mc_runs {
            cfg.set(&format!("{section}mc_runs"), &n.to_string())?;
        }
    }
    Ok(cfg)
}

/// The seed plus the keys of the command's own section; `jobs` is left out
/// so the file does not depend on the thread count.
fn effective_config(cfg: &Config, section: &str) -> String {
    let mut out = format!("seed = {}\n", cfg.seed);
    for (key, _) in KEYS.iter().filter(|(k, _)| k.starts_with(section)) {
        out.push_str(&format!("{key} = {}\n", cfg.get(key).expect("registry key")));
    }
    out
}

fn report(out: &mut dyn Write, files: &[PathBuf]) {
    for f in files {
        let _ = writeln!(out, "wrote {}", f.display());
    }
}

fn sweep_opts(cfg: &Config) -> SweepOptions {
    SweepOptions {
        master_seed: cfg.seed,
        jobs: cfg.jobs,
    }
}

fn print_counts(out: &mut dyn Write, result: &difilter::bench::SweepResult, filters: &[FilterSpec]) {
    let total = result.config_ids().len();
    for f in filters {
        let name = f.to_string();
        let _ = writeln!(out, "{name:>10}: {}/{total} configurations diverged", result.diverged_configs(&name));
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let cmd = &cli.command;
    let dir = cli.common.out.clone().unwrap_or_else(|| match cmd {
        Command::Fixtures { .. } => PathBuf::from("fixtures"),
        _ => Path::new("out").join(cmd.name()),
    });
    let prepare = |section: &str| -> Result<PathBuf, CliError> {
        ensure_dir(&dir)?;
        write_text(&dir.join("config.txt"), &effective_config(&cfg, section))
    };
    match cmd {
        Command::Illustrate => {
            let mut files = vec![prepare("illustrate.")?];
            let ill = illustrate::run(&cfg.illustrate)?;
            files.extend(illustrate::write(&ill, &dir)?);
            for (i, kl) in ill.kl.iter().enumerate() {
                let _ = writeln!(out, "iteration {i}: KL(grid posterior || DIEKF posterior) = {kl:.6e}");
            }
            report(out, &files);
        }
        Command::Example1d => {
            let mut files = vec![prepare("example1d.")?];
            let ex = example1d::run(&cfg.example1d)?;
            files.extend(example1d::write(&ex, &dir)?);
            let min = ex.grid_min();
            let _ = writeln!(out, "y = {}, grid minimum {:.6} at ({}, {})", ex.y, min.loss, min.x0, min.x1);
            for (alg, path) in example1d::ALGORITHMS.iter().zip(&ex.paths) {
                let last = path.last().expect("non-empty path");
                let _ = writeln!(
                    out,
                    "{alg:>9}: {} points, final ({:.4}, {:.4}) loss {:.6}{}",
                    path.len(),
                    last.x0,
                    last.x1,
                    last.loss,
                    if ex.left_grid(alg) { ", left the grid" } else { "" }
                );
            }
            report(out, &files);
        }
        Command::TrackSweep => {
            let mut files = vec![prepare("track.")?];
            let result = sweep::track(&cfg.track, &sweep_opts(&cfg))?;
            let md = sweep::summary_markdown("Tracking sweep", &result, cfg.track.mc_runs, cfg.seed);
            files.extend(sweep::write(&result, &md, &dir)?);
            print_counts(out, &result, &cfg.track.variants);
            report(out, &files);
        }
        Command::TdoaSweep => {
            let mut files = vec![prepare("tdoa.")?];
            let result = sweep::tdoa(&cfg.tdoa, &sweep_opts(&cfg))?;
            let md = sweep::summary_markdown("Acoustic localization sweep", &result, cfg.tdoa.mc_runs, cfg.seed);
            files.extend(sweep::write(&result, &md, &dir)?);
            print_counts(out, &result, &cfg.tdoa.variants);
            report(out, &files);
        }
        Command::Verify { inject_fault } => {
            match inject_fault.as_deref() {
                None => {}
                Some("skip-symmetrize") => difilter::gaussian::fault::set_skip_symmetrize(true),
                Some(other) => return Err(CliError::Usage(format!("unknown fault '{other}'"))),
            }
            let outcomes = verify::run_all(cfg.seed);
            difilter::gaussian::fault::set_skip_symmetrize(false);
            let mut total = std::time::Duration::ZERO;
            for o in &outcomes {
                total += o.runtime;
                let status = if o.result.is_ok() { "pass" } else { "FAIL" };
                let _ = writeln!(out, "{:<24} {status}  {:>9.3} s", o.name, o.runtime.as_secs_f64());
            }
            let _ = writeln!(out, "{:<24}       {:>9.3} s", "total", total.as_secs_f64());
            if let Some(o) = outcomes.iter().find(|o| o.result.is_err()) {
                let msg = o.result.as_ref().expect_err("failed suite");
                return Err(CliError::Verification(format!("{}: {msg}", o.name)));
            }
        }
        Command::Fixtures { check } => {
            let work = tempfile::tempdir().map_err(|e| CliError::io(&std::env::temp_dir(), e))?;
            let mut sink = std::io::sink();
            let mut exec = |args: Vec<String>| -> Result<(), CliError> {
                let sub = Cli::try_parse_from(std::iter::once("dif".to_string()).chain(args))
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                execute(&sub, &mut sink)
            };
            let manifest_path = dir.join(fixtures::MANIFEST);
            if *check {
                let text = std::fs::read_to_string(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
                let expected = fixtures::parse_manifest(&text);
                let actual = fixtures::generate(work.path(), None, &mut exec)?;
                let diff = fixtures::diff(&expected, &actual);
                if !diff.is_empty() {
                    for line in &diff {
                        let _ = writeln!(out, "{line}");
                    }
                    return Err(CliError::Verification(format!("{} fixture outputs differ", diff.len())));
                }
                let _ = writeln!(out, "{} fixture outputs match {}", actual.len(), manifest_path.display());
            } else {
                ensure_dir(&dir)?;
                let entries = fixtures::generate(work.path(), Some(&dir), &mut exec)?;
                write_text(&manifest_path, &fixtures::render_manifest(&entries))?;
                let _ = writeln!(out, "wrote {} ({} outputs)", manifest_path.display(), entries.len());
            }
        }
        Command::Keys => {
            let _ = write!(out, "{}", cfg.render(true));
        }
    }
    Ok(())
}
