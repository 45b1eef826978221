//! Per-run CSV files, `rates.tsv`, `gamma.tsv` and `meta.json`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use nudgefem::analysis::RateTable;
use nudgefem::timestepper::{InitialCondition, RunRecord};
use serde::Serialize;

use crate::config::ExperimentSpec;
use crate::experiment::{relative_to, RunRole, SuiteReport};

pub const CSV_HEADER: [&str; 3] = ["t", "err_l2", "err_h1semi"];

fn create(path: &Path) -> anyhow::Result<File> {
    File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

pub fn write_record_csv(path: &Path, record: &RunRecord) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    w.write_record(CSV_HEADER)?;
    for ((t, l2), h1) in record.times.iter().zip(&record.err_l2).zip(&record.err_h1) {
        w.write_record([t.to_string(), l2.to_string(), h1.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_rate(rate: Option<f64>) -> String {
    rate.map_or_else(|| "-".into(), |r| format!("{r:.2}"))
}

fn role_name(role: RunRole) -> String {
    match role {
        RunRole::Nudged { .. } => "nudged".into(),
        RunRole::Reference { ic } => format!("reference_{}", ic.name()),
    }
}

fn role_mu(role: RunRole) -> f64 {
    match role {
        RunRole::Nudged { mu } => mu,
        RunRole::Reference { .. } => 0.0,
    }
}

pub fn write_rates(path: &Path, report: &SuiteReport) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(BufWriter::new(create(path)?));
    w.write_record(["run", "mu", "level", "accumulated_l2", "roc", "final_l2", "roc", "final_h1semi", "roc"])?;
    let mut roles: Vec<RunRole> = report.spec.mu.iter().map(|&mu| RunRole::Nudged { mu }).collect();
    if report.runs.iter().any(|r| matches!(r.role, RunRole::Reference { .. })) {
        roles.push(RunRole::Reference { ic: InitialCondition::Projected });
        roles.push(RunRole::Reference { ic: InitialCondition::Zero });
    }
    for role in roles {
        let ladder = report.ladder(role);
        if ladder.is_empty() {
            continue;
        }
        let tables: [RateTable; 3] = report.rate_tables(role)?;
        for (i, (level, _)) in ladder.iter().enumerate() {
            let mut row = vec![role_name(role), role_mu(role).to_string(), level.to_string()];
            for t in &tables {
                row.push(format!("{:.4e}", t.rows[i].value));
                row.push(fmt_rate(t.rows[i].rate));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// γ to two significant figures.
pub fn format_gamma(gamma: f64) -> String {
    if gamma == 0.0 || !gamma.is_finite() {
        return gamma.to_string();
    }
    let digits = (1 - gamma.abs().log10().floor() as i32).max(0) as usize;
    let factor = 10f64.powi(gamma.abs().log10().floor() as i32 - 1);
    format!("{:.*}", digits, (gamma / factor).round() * factor)
}

pub fn write_gamma(path: &Path, report: &SuiteReport) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(BufWriter::new(create(path)?));
    w.write_record(["mu", "level", "gamma", "window_start", "window_end", "samples"])?;
    for run in &report.runs {
        let RunRole::Nudged { mu } = run.role else { continue };
        let row = match run.summary().map(|s| &s.fit) {
            Some(Ok(f)) => vec![
                mu.to_string(),
                run.level.to_string(),
                format_gamma(f.gamma),
                f.window.0.to_string(),
                f.window.1.to_string(),
                f.samples.to_string(),
            ],
            Some(Err(e)) => vec![mu.to_string(), run.level.to_string(), "nan".into(), "-".into(), "-".into(), e.replace('\t', " ")],
            None => vec![mu.to_string(), run.level.to_string(), "nan".into(), "-".into(), "-".into(), "run failed".into()],
        };
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MetaRun<'a> {
    label: &'a str,
    role: RunRole,
    level: u32,
    file: String,
    steps: Option<usize>,
    tau: Option<f64>,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct Meta<'a> {
    version: &'static str,
    spec: &'a ExperimentSpec,
    accumulated_window_start: f64,
    runs: Vec<MetaRun<'a>>,
}

pub fn write_meta(path: &Path, report: &SuiteReport) -> anyhow::Result<()> {
    let runs = report
        .runs
        .iter()
        .map(|r| MetaRun {
            label: &r.label,
            role: r.role,
            level: r.level,
            file: relative_to(&r.file, &report.dir).display().to_string(),
            steps: r.summary().map(|s| s.record.steps()),
            tau: r.summary().map(|s| s.record.tau),
            error: r.result.as_ref().err().map(String::as_str),
        })
        .collect();
    let meta = Meta { version: env!("CARGO_PKG_VERSION"), spec: &report.spec, accumulated_window_start: report.spec.window_start, runs };
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, &meta)?;
    writeln!(w)?;
    Ok(())
}

pub fn write_all(report: &SuiteReport) -> anyhow::Result<()> {
    for run in &report.runs {
        if let Some(s) = run.summary() {
            write_record_csv(&run.file, &s.record)?;
        }
    }
    write_rates(&report.dir.join("rates.tsv"), report)?;
    write_gamma(&report.dir.join("gamma.tsv"), report)?;
    write_meta(&report.dir.join("meta.json"), report)?;
    Ok(())
}
