//! Python bindings. Configs go in as JSON strings with the same schema as the
//! command-line tool; structured results come back as dicts.

use handsoff::jobs::{demo_job, run_job};
use handsoff::oracle_1d::{handsoff_control_1d as control_1d, min_time_1d, ScalarPlant};
use handsoff::self_triggered::{run_episode_stream, stability_report as report};
use handsoff::sparse_control::{minimum_time as min_time, solve_problem, MinTimeOptions};
use handsoff::{Error, FiniteHorizonProblem, LtiSystem, Objective, SelfTriggeredConfig};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(handsoff_py, HandsoffError, PyException);
create_exception!(handsoff_py, InfeasibleError, HandsoffError);
create_exception!(handsoff_py, UnreachableError, HandsoffError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Infeasible { .. } => InfeasibleError::new_err(e.to_string()),
        Error::Unreachable { .. } => UnreachableError::new_err(e.to_string()),
        Error::Parse(_) | Error::Dimension(_) | Error::InvalidArgument(_) | Error::NonFinite(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => HandsoffError::new_err(e.to_string()),
    }
}

fn parse<T: serde::de::DeserializeOwned>(json: &str) -> PyResult<T> {
    serde_json::from_str(json).map_err(|e| PyValueError::new_err(format!("malformed config: {e}")))
}

/// Turns a serializable value into Python objects through `json.loads`.
fn to_object<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| HandsoffError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Minimum transfer time from `x0` to `x_target` (origin by default) for
/// `dx/dt = A x + B u`, `|u_i| <= 1`, by bisection on grid feasibility.
#[pyfunction]
#[pyo3(signature = (a, b, x0, x_target=None))]
fn minimum_time(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, x0: Vec<f64>, x_target: Option<Vec<f64>>) -> PyResult<f64> {
    let sys = LtiSystem::from_rows(&a, &b).map_err(to_py)?;
    let target = x_target.unwrap_or_else(|| vec![0.0; sys.n()]);
    min_time(&sys, &x0, &target, &MinTimeOptions::default()).map_err(to_py)
}

/// Closed-form minimum time of `dx/dt = a x + a u`.
#[pyfunction]
fn scalar_minimum_time(a: f64, x0: f64) -> PyResult<f64> {
    let plant = ScalarPlant::linear(a).map_err(to_py)?;
    min_time_1d(&plant, x0).map_err(to_py)
}

/// Closed-form maximum hands-off control of `dx/dt = a x + a u` on
/// `[0, horizon]`: `(tau, [(start, end, value), ...])`.
#[pyfunction]
fn handsoff_control_1d(a: f64, x0: f64, horizon: f64) -> PyResult<(f64, Vec<(f64, f64, f64)>)> {
    let plant = ScalarPlant::linear(a).map_err(to_py)?;
    let c = control_1d(&plant, x0, horizon).map_err(to_py)?;
    Ok((c.tau, c.segments.iter().map(|s| (s.start, s.end, s.value)).collect()))
}

/// Solves a finite-horizon problem given as JSON.
#[pyfunction]
#[pyo3(signature = (config, objective=None))]
fn solve<'py>(py: Python<'py>, config: &str, objective: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let mut prob = parse::<FiniteHorizonProblem>(config)?.normalized();
    if let Some(o) = objective {
        prob.objective = o.parse::<Objective>().map_err(to_py)?;
    }
    let sol = solve_problem(&prob).map_err(to_py)?;
    let out = PyDict::new(py);
    // One row per channel (state component), one column per grid cell.
    out.set_item("u", rows(sol.u.samples()))?;
    out.set_item("x", rows(sol.x.samples()))?;
    out.set_item("dt", sol.u.dt())?;
    out.set_item("objective_value", sol.objective_value)?;
    out.set_item("support_cardinality", sol.support_cardinality())?;
    out.set_item("status", to_object(py, &sol.status)?)?;
    out.set_item("iterations", sol.iterations)?;
    out.set_item("certificates", to_object(py, &sol.certificates)?)?;
    Ok(out)
}

/// Runs one self-triggered episode on noise stream `stream`.
#[pyfunction]
#[pyo3(signature = (config, stream=0))]
fn simulate<'py>(py: Python<'py>, config: &str, stream: u64) -> PyResult<Bound<'py, PyDict>> {
    let cfg: SelfTriggeredConfig = parse(config)?;
    let log = run_episode_stream(&cfg, stream).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("status", to_object(py, &log.status)?)?;
    out.set_item("measured_rate", log.measured_rate)?;
    out.set_item("elapsed", log.elapsed)?;
    out.set_item("events", to_object(py, &log.events)?)?;
    out.set_item("t", log.dense.t.clone())?;
    out.set_item("x", log.dense.x.clone())?;
    out.set_item("u", log.dense.u.clone())?;
    Ok(out)
}

#[pyfunction]
fn stability_report<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg: SelfTriggeredConfig = parse(config)?;
    to_object(py, &report(&cfg).map_err(to_py)?)
}

/// Runs a built-in demo; returns `{file suffix: contents}`.
#[pyfunction]
#[pyo3(signature = (name, seed=0))]
fn demo<'py>(py: Python<'py>, name: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let job = demo_job(name, seed).map_err(to_py)?;
    let run = run_job(&job, 0).map_err(to_py)?;
    let out = PyDict::new(py);
    for a in run.artifacts {
        out.set_item(a.suffix, a.contents)?;
    }
    Ok(out)
}

#[pymodule]
fn handsoff_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("HandsoffError", m.py().get_type::<HandsoffError>())?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add("UnreachableError", m.py().get_type::<UnreachableError>())?;
    m.add_function(wrap_pyfunction!(minimum_time, m)?)?;
    m.add_function(wrap_pyfunction!(scalar_minimum_time, m)?)?;
    m.add_function(wrap_pyfunction!(handsoff_control_1d, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(stability_report, m)?)?;
    m.add_function(wrap_pyfunction!(demo, m)?)?;
    Ok(())
}
