//! Python module `magnifier`. Structured results cross the boundary as JSON strings.

use magnifier_core::bench;
use magnifier_core::planner;
use magnifier_core::scenario::{parse_scenario_str, ModeChoice};
use magnifier_core::{Mode, ScenarioError, Topology};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn scenario_err(e: ScenarioError) -> PyErr {
    value_err(e)
}

/// Seeded batch of conflict-free flight plans, as JSON.
#[pyfunction]
#[pyo3(signature = (m, lambda_param, n, region_size, seed, fd = 1, fuel = 325))]
fn generate_flight_plans(m: usize, lambda_param: f64, n: u32, region_size: u32, seed: u64, fd: i64, fuel: i64) -> PyResult<String> {
    let topo = Topology::mesh(n, region_size).map_err(value_err)?;
    let batch = planner::generate_flight_plans(m, lambda_param, fd, &topo, seed, fuel).map_err(value_err)?;
    serde_json::to_string(&batch).map_err(value_err)
}

/// Verify a scenario given as JSON. Returns the report as JSON; `mode`
/// overrides the scenario's own ("compositional" or "monolithic").
#[pyfunction]
#[pyo3(signature = (scenario_json, mode = None))]
fn verify_scenario(py: Python<'_>, scenario_json: &str, mode: Option<&str>) -> PyResult<String> {
    let cfg = parse_scenario_str(scenario_json).map_err(scenario_err)?;
    let mode = match mode {
        Some("compositional") => Mode::Compositional,
        Some("monolithic") => Mode::Monolithic,
        Some(other) => return Err(value_err(format!("unknown mode {other:?}"))),
        None if cfg.mode == ModeChoice::Monolithic => Mode::Monolithic,
        None => Mode::Compositional,
    };
    let report = py.detach(|| bench::run_mode(&cfg, mode)).map_err(scenario_err)?;
    serde_json::to_string(&report).map_err(value_err)
}

/// Run every requested mode `repetitions` times and return the CSV rows.
#[pyfunction]
#[pyo3(signature = (scenario_json, repetitions = 1))]
fn bench_csv(py: Python<'_>, scenario_json: &str, repetitions: usize) -> PyResult<String> {
    let cfg = parse_scenario_str(scenario_json).map_err(scenario_err)?;
    let rows = py.detach(|| bench::run_experiment(&cfg, repetitions)).map_err(scenario_err)?;
    Ok(bench::csv_string(&rows))
}

#[pymodule]
fn magnifier(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SCHEMA_VERSION", magnifier_core::scenario::SCHEMA_VERSION)?;
    m.add_function(wrap_pyfunction!(generate_flight_plans, m)?)?;
    m.add_function(wrap_pyfunction!(verify_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(bench_csv, m)?)?;
    Ok(())
}
