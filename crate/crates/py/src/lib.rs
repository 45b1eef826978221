//! Python module `nudgefem`: single nudged or reference runs, rate tables and γ fits.

use std::f64::consts::PI;

use nudgefem::analysis::{accumulated_series, fit_exponential_rate, roc_table, window_start_index};
use nudgefem::problems::ProblemKind;
use nudgefem::strategies::StrategyKind;
use nudgefem::timestepper::{self, InitialCondition, SchemeConfig, SolverPath};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Runs one simulation to T = 3 and returns a dict with `tau`, `t`, `err_l2`, `err_h1semi`.
#[pyfunction]
#[pyo3(signature = (problem, strategy, level, mu, omega = PI, ic = "zero", solver = "direct"))]
fn run<'py>(py: Python<'py>, problem: &str, strategy: &str, level: u32, mu: f64, omega: f64, ic: &str, solver: &str) -> PyResult<Bound<'py, PyDict>> {
    let problem: ProblemKind = problem.parse().map_err(value_err)?;
    let strategy: StrategyKind = strategy.parse().map_err(value_err)?;
    let mut config = SchemeConfig::new(problem, strategy, level, mu, omega);
    config.initial_condition = ic.parse::<InitialCondition>().map_err(value_err)?;
    config.solver = solver.parse::<SolverPath>().map_err(value_err)?;
    let record = py.detach(|| timestepper::run(&config)).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("tau", record.tau)?;
    out.set_item("t", record.times)?;
    out.set_item("err_l2", record.err_l2)?;
    out.set_item("err_h1semi", record.err_h1)?;
    Ok(out)
}

/// Discrete `L²(start, T; L²)` norm of an error series sampled every `tau` from t = 0.
#[pyfunction]
fn accumulated_error(errors: Vec<f64>, tau: f64, start: f64) -> PyResult<f64> {
    let times: Vec<f64> = (0..errors.len()).map(|k| k as f64 * tau).collect();
    let m = window_start_index(&times, start).map_err(value_err)?;
    accumulated_series(&errors, tau, m).map_err(value_err)
}

/// log₂ ratios of successive errors given as `(level, error)` pairs.
#[pyfunction]
fn rates(errors: Vec<(u32, f64)>) -> PyResult<Vec<f64>> {
    Ok(roc_table(&errors).map_err(value_err)?.rates())
}

/// Exponential decay rate of an error series; returns `(gamma, (t0, t1), samples)`.
#[pyfunction]
#[pyo3(signature = (times, errors, window = None))]
fn fit_gamma(times: Vec<f64>, errors: Vec<f64>, window: Option<(f64, f64)>) -> PyResult<(f64, (f64, f64), usize)> {
    let fit = fit_exponential_rate(&times, &errors, window).map_err(value_err)?;
    Ok((fit.gamma, fit.window, fit.samples))
}

#[pymodule]
#[pyo3(name = "nudgefem")]
fn nudgefem_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(accumulated_error, m)?)?;
    m.add_function(wrap_pyfunction!(rates, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gamma, m)?)?;
    Ok(())
}
