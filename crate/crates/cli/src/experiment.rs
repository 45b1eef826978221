//! Saturation, convergence and single-run suites.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::{info, warn};
use nudgefem::analysis::{accumulated_error, fit_exponential_rate, roc_table, window_start_index, ExponentialFit, RateTable};
use nudgefem::timestepper::{run, InitialCondition, RunRecord, SchemeConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentKind, ExperimentSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RunRole {
    Nudged { mu: f64 },
    Reference { ic: InitialCondition },
}

impl RunRole {
    pub fn label(&self, level: u32) -> String {
        match self {
            RunRole::Nudged { mu } => format!("mu{mu}_l{level}"),
            RunRole::Reference { ic } => format!("reference_{}_l{level}", ic.name()),
        }
    }
}

/// Derived quantities of one finished run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    /// Discrete `L²(t_M, T; L²)` error.
    pub accumulated: f64,
    pub window_start: f64,
    pub final_l2: f64,
    pub final_h1: f64,
    pub fit: Result<ExponentialFit, String>,
    #[serde(skip)]
    pub record: RunRecord,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub role: RunRole,
    pub level: u32,
    pub label: String,
    pub file: PathBuf,
    pub result: Result<RunSummary, String>,
}

impl RunOutcome {
    pub fn summary(&self) -> Option<&RunSummary> {
        self.result.as_ref().ok()
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub spec: ExperimentSpec,
    pub dir: PathBuf,
    pub runs: Vec<RunOutcome>,
}

impl SuiteReport {
    pub fn all_succeeded(&self) -> bool {
        self.runs.iter().all(|r| r.result.is_ok())
    }

    pub fn find(&self, role: RunRole, level: u32) -> Option<&RunOutcome> {
        self.runs.iter().find(|r| r.role == role && r.level == level)
    }

    /// Successful runs of `role` ordered by level.
    pub fn ladder(&self, role: RunRole) -> Vec<(u32, &RunSummary)> {
        let mut out: Vec<_> = self.runs.iter().filter(|r| r.role == role).filter_map(|r| r.summary().map(|s| (r.level, s))).collect();
        out.sort_by_key(|(l, _)| *l);
        out
    }

    /// Rate tables of the accumulated error, final `L²` error and final `H¹` seminorm error.
    pub fn rate_tables(&self, role: RunRole) -> anyhow::Result<[RateTable; 3]> {
        let ladder = self.ladder(role);
        let col = |f: fn(&RunSummary) -> f64| roc_table(&ladder.iter().map(|(l, s)| (*l, f(s))).collect::<Vec<_>>());
        Ok([col(|s| s.accumulated)?, col(|s| s.final_l2)?, col(|s| s.final_h1)?])
    }

    pub fn gamma(&self, mu: f64, level: u32) -> Option<&Result<ExponentialFit, String>> {
        self.find(RunRole::Nudged { mu }, level).and_then(|r| r.summary()).map(|s| &s.fit)
    }
}

fn summarize(record: RunRecord, spec: &ExperimentSpec) -> anyhow::Result<RunSummary> {
    let m = window_start_index(&record.times, spec.window_start)?;
    let accumulated = accumulated_error(&record, m)?;
    let fit = fit_exponential_rate(&record.times, &record.err_l2, spec.fit_window).map_err(|e| e.to_string());
    Ok(RunSummary {
        accumulated,
        window_start: record.times[m],
        final_l2: *record.err_l2.last().expect("record has samples"),
        final_h1: *record.err_h1.last().expect("record has samples"),
        fit,
        record,
    })
}

fn planned_runs(spec: &ExperimentSpec) -> Vec<(RunRole, u32, SchemeConfig)> {
    let mut plan = Vec::new();
    for &level in &spec.levels {
        for &mu in &spec.mu {
            plan.push((RunRole::Nudged { mu }, level, spec.scheme(level, mu)));
        }
        if spec.experiment != ExperimentKind::Single {
            for ic in [InitialCondition::Projected, InitialCondition::Zero] {
                plan.push((RunRole::Reference { ic }, level, spec.reference(level, ic)));
            }
        }
    }
    plan
}

/// Runs every planned configuration and writes all outputs under [`ExperimentSpec::run_dir`].
///
/// Individual run failures are recorded in the report and in `meta.json`; only
/// I/O problems abort the suite.
pub fn run_suite(spec: &ExperimentSpec) -> anyhow::Result<SuiteReport> {
    let dir = spec.run_dir();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let plan = planned_runs(spec);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(spec.jobs).build()?;
    let runs: Vec<RunOutcome> = pool.install(|| {
        plan.par_iter()
            .map(|(role, level, config)| {
                let label = role.label(*level);
                info!("start {label} ({} steps)", config.steps());
                let result = run(config).map_err(anyhow::Error::from).and_then(|r| summarize(r, spec)).map_err(|e| format!("{e:#}"));
                match &result {
                    Ok(s) => info!("done {label}: accumulated {:.4e}, {:.1}s", s.accumulated, s.record.wall_seconds),
                    Err(e) => warn!("{label} failed: {e}"),
                }
                RunOutcome { role: *role, level: *level, file: dir.join(format!("{label}.csv")), label, result }
            })
            .collect()
    });
    let report = SuiteReport { spec: spec.clone(), dir, runs };
    crate::output::write_all(&report)?;
    Ok(report)
}

/// Runs a saturation suite: γ fits per μ against the two reference runs.
pub fn run_saturation(spec: &ExperimentSpec) -> anyhow::Result<SuiteReport> {
    let spec = ExperimentSpec { experiment: ExperimentKind::Saturation, ..spec.clone() };
    run_suite(&spec)
}

/// Runs a convergence suite over the level list.
pub fn run_convergence(spec: &ExperimentSpec) -> anyhow::Result<SuiteReport> {
    let spec = ExperimentSpec { experiment: ExperimentKind::Convergence, ..spec.clone() };
    run_suite(&spec)
}

pub fn relative_to<'a>(path: &'a Path, base: &Path) -> &'a Path {
    path.strip_prefix(base).unwrap_or(path)
}
