//! Scenario runner, continuous baseline, parameter sweeps and offline audits.
//!
//! A run directory holds:
//!
//! * `config.conf`: the fully resolved configuration,
//! * `trace.csv`: one row per logged step,
//! * `events.csv`: the control-update log,
//! * `diagnostics.csv`: Lyapunov columns and the decay-inequality bound,
//! * `summary.json`: the [`RunSummary`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::{self, SafeSetTolerance};
use crate::config::{self, Config, ConfigError};
use crate::controller::{self, ContinuousController, ControlLaw, EtcController};
use crate::diagnostics;
use crate::model;
use crate::solver::{self, SolverError};
use crate::trace::{self, CsvIoError, Trace, TraceRecord};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] CsvIoError),
    #[error("cannot create {path}: {source}")]
    Dir { path: String, source: std::io::Error },
    #[error("solver failed: {0}")]
    Solver(#[from] SolverError),
    #[error("grid spec: {0}")]
    Grid(String),
    #[error("summary: {0}")]
    Json(#[from] serde_json::Error),
    #[error("audit input: {0}")]
    Audit(String),
}

/// Which control law drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    EventTriggered,
    Continuous,
}

/// Headline numbers of one run; every field except `wall_time` is
/// recomputable from the CSV files of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    /// Control updates (events for ETC, consultations for the baseline).
    pub event_count: usize,
    pub steps: usize,
    pub dt: f64,
    pub t_end: f64,
    pub min_gap: Option<f64>,
    pub mean_gap: Option<f64>,
    pub tau: f64,
    pub zeno_passed: bool,
    pub final_s: f64,
    pub final_s_error: f64,
    pub max_s: f64,
    /// Most negative logged interface velocity (0 if none negative).
    pub min_sdot: f64,
    pub min_h1: f64,
    pub min_h2: f64,
    pub min_h3: f64,
    pub min_h: f64,
    pub safe_set_passed: bool,
    pub energy_defect: f64,
    pub sigma0: f64,
    #[serde(rename = "Phi_ratio")]
    pub phi_ratio: f64,
    pub envelope_slope: f64,
    pub decay_inequality_violations: usize,
    pub wall_time: f64,
}

/// A finished run kept in memory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: Config,
    pub trace: Trace,
    pub summary: RunSummary,
}

pub fn summarize(cfg: &Config, trace: &Trace, mode: Mode, wall_time: f64) -> RunSummary {
    let recs = &trace.records;
    let last = recs.last().cloned().unwrap_or_default();
    let tol = SafeSetTolerance::relative_to(recs);
    let safe = cbf::safe_set_check(recs, cfg.setpoint.s_r, &tol);
    let zeno = controller::zeno_audit(&trace.events, &cfg.gains, trace.dt);
    let decay = diagnostics::decay_report(recs, &cfg.lyapunov()).ok();
    RunSummary {
        mode,
        event_count: trace.updates,
        steps: trace.steps,
        dt: trace.dt,
        t_end: last.t,
        min_gap: zeno.min_gap,
        mean_gap: zeno.mean_gap,
        tau: zeno.tau,
        zeno_passed: zeno.passed,
        final_s: last.s,
        final_s_error: (last.s - cfg.setpoint.s_r).abs(),
        max_s: safe.max_s,
        min_sdot: recs.iter().map(|r| r.sdot).fold(0.0, f64::min),
        min_h1: safe.min_h1,
        min_h2: safe.min_h2,
        min_h3: safe.min_h3,
        min_h: safe.min_h,
        safe_set_passed: safe.passed(),
        energy_defect: model::energy_balance_defect(recs).unwrap_or(0.0),
        sigma0: recs.first().map(|r| r.h1).unwrap_or(0.0),
        phi_ratio: decay.as_ref().map(|d| d.phi_ratio).unwrap_or(0.0),
        envelope_slope: decay.as_ref().map(|d| d.envelope_slope).unwrap_or(0.0),
        decay_inequality_violations: decay.map(|d| d.inequality_violations).unwrap_or(0),
        wall_time,
    }
}

/// Runs a validated config in memory.
pub fn simulate(cfg: &Config, mode: Mode) -> Result<RunOutput, SolverError> {
    let start = Instant::now();
    let trace = match mode {
        Mode::EventTriggered => {
            let mut ctl = EtcController::new(cfg.gains);
            solver::run(cfg, &mut ctl)?
        }
        Mode::Continuous => {
            let mut ctl = ContinuousController::new(cfg.gains);
            let tr = solver::run(cfg, &mut ctl)?;
            debug_assert_eq!(ctl.update_count(), tr.updates);
            tr
        }
    };
    let summary = summarize(cfg, &trace, mode, start.elapsed().as_secs_f64());
    Ok(RunOutput {
        config: cfg.clone(),
        trace,
        summary,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Dir {
        path: dir.display().to_string(),
        source,
    })
}

pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<(), HarnessError> {
    ensure_dir(dir)?;
    trace::write_text(&dir.join("config.conf"), &out.config.render())?;
    trace::write_trace_csv(&dir.join("trace.csv"), &out.trace.records)?;
    trace::write_events_csv(&dir.join("events.csv"), &out.trace.events)?;
    let rows = diagnostics::diagnostics_rows(&out.trace.records, &out.config.lyapunov());
    trace::write_csv(&dir.join("diagnostics.csv"), &rows)?;
    let json = serde_json::to_string_pretty(&out.summary)?;
    trace::write_text(&dir.join("summary.json"), &(json + "\n"))?;
    Ok(())
}

fn run_file(config_path: &Path, out_dir: &Path, mode: Mode) -> Result<RunSummary, HarnessError> {
    let cfg = Config::from_file(config_path)?;
    let out = simulate(&cfg, mode)?;
    write_outputs(out_dir, &out)?;
    Ok(out.summary)
}

/// Event-triggered run of a config file; writes the run directory.
pub fn run_scenario(config_path: &Path, out_dir: &Path) -> Result<RunSummary, HarnessError> {
    run_file(config_path, out_dir, Mode::EventTriggered)
}

/// Same pipeline with `U = U*` recomputed at every base step.
pub fn run_baseline_continuous(config_path: &Path, out_dir: &Path) -> Result<RunSummary, HarnessError> {
    run_file(config_path, out_dir, Mode::Continuous)
}

pub const SWEEP_KEYS: &[&str] = &["c1", "c2", "delta1", "delta2", "epsilon", "N", "dt"];

/// Parses `key=v1,v2;key2=v3` into an ordered list of axes.
pub fn parse_grid(spec: &str) -> Result<Vec<(String, Vec<String>)>, HarnessError> {
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| HarnessError::Grid(format!("expected key=v1,v2 in {part:?}")))?;
        let key = key.trim();
        if !SWEEP_KEYS.contains(&key) {
            return Err(HarnessError::Grid(format!(
                "{key:?} cannot be swept (allowed: {})",
                SWEEP_KEYS.join(", ")
            )));
        }
        if axes.iter().any(|(k, _)| k == key) {
            return Err(HarnessError::Grid(format!("{key:?} listed twice")));
        }
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(HarnessError::Grid(format!("{key:?} has no values")));
        }
        axes.push((key.to_string(), values));
    }
    Ok(axes)
}

/// Cartesian product of the axes; one empty point for an empty grid.
pub fn grid_points(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut points = vec![Vec::new()];
    for (key, values) in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

/// One row of the sweep aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: String,
    pub overrides: String,
    pub status: String,
    pub error: String,
    pub event_count: Option<usize>,
    pub min_gap: Option<f64>,
    pub tau: Option<f64>,
    pub zeno_passed: Option<bool>,
    pub final_s_error: Option<f64>,
    pub min_h1: Option<f64>,
    pub min_h2: Option<f64>,
    pub min_h3: Option<f64>,
    pub min_h: Option<f64>,
    pub safe_set_passed: Option<bool>,
    #[serde(rename = "Phi_ratio")]
    pub phi_ratio: Option<f64>,
    pub wall_time: Option<f64>,
}

impl SweepRow {
    fn new(run: String, overrides: String, result: Result<RunSummary, HarnessError>) -> Self {
        let (status, error, s) = match result {
            Ok(s) => ("ok".to_string(), String::new(), Some(s)),
            Err(HarnessError::Config(e)) => ("config_error".into(), e.to_string(), None),
            Err(HarnessError::Solver(e)) => ("solver_error".into(), e.to_string(), None),
            Err(e) => ("error".into(), e.to_string(), None),
        };
        Self {
            run,
            overrides,
            status,
            error,
            event_count: s.as_ref().map(|s| s.event_count),
            min_gap: s.as_ref().and_then(|s| s.min_gap),
            tau: s.as_ref().map(|s| s.tau),
            zeno_passed: s.as_ref().map(|s| s.zeno_passed),
            final_s_error: s.as_ref().map(|s| s.final_s_error),
            min_h1: s.as_ref().map(|s| s.min_h1),
            min_h2: s.as_ref().map(|s| s.min_h2),
            min_h3: s.as_ref().map(|s| s.min_h3),
            min_h: s.as_ref().map(|s| s.min_h),
            safe_set_passed: s.as_ref().map(|s| s.safe_set_passed),
            phi_ratio: s.as_ref().map(|s| s.phi_ratio),
            wall_time: s.as_ref().map(|s| s.wall_time),
        }
    }
}

/// Runs every grid point of `grid_spec` on top of the base config.
///
/// Each point gets its own `run_NNN` subdirectory; `sweep.csv` in `out_dir`
/// aggregates the summaries. A failing point is recorded in its row and does
/// not stop the others.
pub fn sweep(config_path: &Path, grid_spec: &str, out_dir: &Path, jobs: usize) -> Result<Vec<SweepRow>, HarnessError> {
    let text = std::fs::read_to_string(config_path).map_err(|source| ConfigError::Io {
        path: config_path.display().to_string(),
        source,
    })?;
    let base = config::parse_pairs(&text)?;
    let axes = parse_grid(grid_spec)?;
    let points = grid_points(&axes);
    ensure_dir(out_dir)?;

    let work = |(idx, point): (usize, &Vec<(String, String)>)| -> SweepRow {
        let name = format!("run_{idx:03}");
        let overrides = point.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";");
        let mut pairs: BTreeMap<String, String> = base.clone();
        for (k, v) in point {
            pairs.insert(k.clone(), v.clone());
        }
        // A swept N must re-derive the default step unless dt is swept too.
        if point.iter().any(|(k, _)| k == "N") && !point.iter().any(|(k, _)| k == "dt") {
            pairs.remove("dt");
        }
        let result = Config::from_pairs(&pairs).map_err(HarnessError::from).and_then(|cfg| {
            let out = simulate(&cfg, Mode::EventTriggered)?;
            write_outputs(&out_dir.join(&name), &out)?;
            Ok(out.summary)
        });
        SweepRow::new(name, overrides, result)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Grid(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| points.par_iter().enumerate().map(work).collect());
    trace::write_csv(&out_dir.join("sweep.csv"), &rows)?;
    Ok(rows)
}

/// One audit outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Loads the trace rows of a run directory.
pub fn load_records(dir: &Path) -> Result<Vec<TraceRecord>, HarnessError> {
    Ok(trace::read_trace_csv(&dir.join("trace.csv"))?)
}

/// Re-runs the safe-set, dwell-time, energy-balance and decay checks on the
/// stored CSV files of a run directory.
pub fn audit(dir: &Path) -> Result<AuditReport, HarnessError> {
    let cfg = Config::from_file(&dir.join("config.conf"))?;
    let records = load_records(dir)?;
    if records.is_empty() {
        return Err(HarnessError::Audit(format!("{}: trace.csv has no rows", dir.display())));
    }
    let events = trace::read_events_csv(&dir.join("events.csv"))?;
    let mut checks = Vec::new();

    let tol = SafeSetTolerance::relative_to(&records);
    let safe = cbf::safe_set_check(&records, cfg.setpoint.s_r, &tol);
    checks.push(AuditCheck {
        name: "safe-set",
        passed: safe.passed(),
        detail: match &safe.first_violation {
            None => format!(
                "min h1 {:e}, h2 {:e}, h3 {:e}, h {:e}; max s {}",
                safe.min_h1, safe.min_h2, safe.min_h3, safe.min_h, safe.max_s
            ),
            Some(v) => format!("{} = {:e} < {:e} at t = {}", v.quantity, v.value, v.bound, v.t),
        },
    });

    let zeno = controller::zeno_audit(&events, &cfg.gains, cfg.settings.dt);
    checks.push(AuditCheck {
        name: "dwell-time",
        passed: zeno.passed,
        detail: match zeno.violation {
            None => format!(
                "{} events, min gap {:?}, tau {}",
                zeno.event_count, zeno.min_gap, zeno.tau
            ),
            Some((a, b)) => format!("gap {} between t = {a} and t = {b} below tau {}", b - a, zeno.tau),
        },
    });

    let defect = model::energy_balance_defect(&records).map_err(|e| HarnessError::Audit(e.to_string()))?;
    let sigma0 = records[0].h1.abs();
    checks.push(AuditCheck {
        name: "energy-balance",
        passed: defect <= 1e-3 * sigma0,
        detail: format!("defect {defect:e} vs 1e-3·|σ(0)| = {:e}", 1e-3 * sigma0),
    });

    let decay = diagnostics::decay_report(&records, &cfg.lyapunov()).map_err(|e| HarnessError::Audit(e.to_string()))?;
    let vacuous = decay.phi_initial == 0.0 && decay.phi_final == 0.0;
    checks.push(AuditCheck {
        name: "decay",
        passed: vacuous || decay.decays(),
        detail: format!(
            "Phi ratio {:e}, envelope slope {:e}, inequality violations {}/{}",
            decay.phi_ratio, decay.envelope_slope, decay.inequality_violations, decay.inequality_checked
        ),
    });

    Ok(AuditReport { checks })
}

/// Output subdirectory for sweep point `idx`.
pub fn sweep_run_dir(out_dir: &Path, idx: usize) -> PathBuf {
    out_dir.join(format!("run_{idx:03}"))
}
