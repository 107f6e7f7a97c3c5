//! Python bindings. Results come back as plain dicts and lists.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use bpsim_core::auxctrl;
use bpsim_core::controller;
use bpsim_core::dualopt::{self, DualError, DualOptions};
use bpsim_core::engine::{self, RunConfig};
use bpsim_core::format::{self, LoadedScenario};
use bpsim_core::queueing::Discipline;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A validated scenario: Markov chain, queues and per-state action tables.
#[pyclass(module = "bpsim", frozen)]
struct Scenario {
    inner: LoadedScenario,
}

#[pymethods]
impl Scenario {
    /// Loads a scenario file, or a builtin by name.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        format::load_scenario(path).map(|inner| Self { inner }).map_err(value_err)
    }

    /// Parses scenario text in the TOML format.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        format::parse_scenario(text).map(|inner| Self { inner }).map_err(value_err)
    }

    /// Canonical explicit-form TOML text.
    fn to_toml(&self) -> PyResult<String> {
        format::emit_scenario(self.inner.scenario.spec(), self.inner.aux.as_ref()).map_err(value_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.scenario.name().to_string()
    }

    #[getter]
    fn queue_count(&self) -> usize {
        self.inner.scenario.queue_count()
    }

    #[getter]
    fn state_count(&self) -> usize {
        self.inner.scenario.state_count()
    }

    #[getter]
    fn delta_max(&self) -> f64 {
        self.inner.scenario.delta_max()
    }

    #[getter]
    fn stationary(&self) -> Vec<f64> {
        self.inner.scenario.stationary().to_vec()
    }

    #[getter]
    fn has_aux(&self) -> bool {
        self.inner.aux.is_some()
    }

    fn action_count(&self, state: usize) -> PyResult<usize> {
        if state >= self.inner.scenario.state_count() {
            return Err(PyValueError::new_err(format!("state {state} out of range")));
        }
        Ok(self.inner.scenario.action_count(state))
    }

    /// `(cost, arrivals, services)` of one action.
    fn action(&self, state: usize, action: usize) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
        let scn = &self.inner.scenario;
        if state >= scn.state_count() || action >= scn.action_count(state) {
            return Err(PyValueError::new_err(format!("no action {action} in state {state}")));
        }
        let row = scn.row(state, action);
        Ok((row.cost, row.arrivals.clone(), row.services.clone()))
    }

    fn __repr__(&self) -> String {
        let s = &self.inner.scenario;
        format!("Scenario(name={:?}, queues={}, states={})", s.name(), s.queue_count(), s.state_count())
    }
}

#[pyfunction]
fn builtin_names() -> Vec<&'static str> {
    format::builtin_names()
}

#[pyfunction]
fn load_scenario(path: &str) -> PyResult<Scenario> {
    Scenario::load(path)
}

/// Backpressure decision for one slot.
#[pyfunction]
#[pyo3(signature = (scenario, state, backlog, v, decomposed = false))]
fn bp_decide<'py>(
    py: Python<'py>,
    scenario: &Scenario,
    state: usize,
    backlog: Vec<f64>,
    v: f64,
    decomposed: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let scn = &scenario.inner.scenario;
    let d = if decomposed {
        controller::bp_decide_decomposed(scn, state, &backlog, v)
    } else {
        controller::bp_decide(scn, state, &backlog, v)
    }
    .map_err(value_err)?;
    to_py(py, &d)
}

/// Auxiliary-variable decision for one slot; needs a scenario with an `[aux]` table.
#[pyfunction]
fn aux_bp_decide<'py>(
    py: Python<'py>,
    scenario: &Scenario,
    state: usize,
    backlog: Vec<f64>,
    h: Vec<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let aux = scenario.inner.aux.as_ref().ok_or_else(|| PyValueError::new_err("scenario has no [aux] table"))?;
    let d = auxctrl::aux_bp_decide(&scenario.inner.scenario, aux, state, &backlog, &h).map_err(value_err)?;
    to_py(py, &d)
}

/// Dual function value, a supergradient and the per-state minimizers.
#[pyfunction]
fn dual_value<'py>(py: Python<'py>, scenario: &Scenario, gamma: Vec<f64>, v: f64) -> PyResult<Bound<'py, PyAny>> {
    let eval = dualopt::dual_value(&scenario.inner.scenario, &gamma, v).map_err(value_err)?;
    to_py(py, &eval)
}

#[pyfunction]
#[pyo3(signature = (scenario, v, max_iters = None, tol = None, seed = 0))]
fn solve_dual<'py>(
    py: Python<'py>,
    scenario: &Scenario,
    v: f64,
    max_iters: Option<usize>,
    tol: Option<f64>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let mut opts = DualOptions { seed, ..DualOptions::default() };
    if let Some(n) = max_iters {
        opts.max_iters = n;
    }
    if let Some(t) = tol {
        opts.tol = t;
    }
    let scn = &scenario.inner.scenario;
    let sol = py.detach(|| dualopt::solve_dual(scn, v, &opts)).map_err(value_err)?;
    to_py(py, &sol)
}

/// Slackness margin; `feasible` is false when no policy drains every queue.
#[pyfunction]
fn check_slackness<'py>(py: Python<'py>, scenario: &Scenario) -> PyResult<Bound<'py, PyAny>> {
    let scn = &scenario.inner.scenario;
    match py.detach(|| dualopt::check_slackness(scn)) {
        Ok(c) => to_py(py, &serde_json::json!({ "feasible": true, "eta": c.eta, "policy": c.policy })),
        Err(DualError::Infeasible { eta }) => to_py(py, &serde_json::json!({ "feasible": false, "eta": eta })),
        Err(e) => Err(value_err(e)),
    }
}

/// Simulates one run and returns its report.
#[pyfunction]
#[pyo3(signature = (scenario, v, discipline = "lifo", horizon = 100_000, seed = 1, gamma_star = None, warmup = None))]
fn run<'py>(
    py: Python<'py>,
    scenario: &Scenario,
    v: f64,
    discipline: &str,
    horizon: u64,
    seed: u64,
    gamma_star: Option<Vec<f64>>,
    warmup: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let d: Discipline = discipline.parse().map_err(value_err)?;
    let mut cfg = RunConfig::new(v, d, horizon, seed);
    cfg.gamma_star = gamma_star;
    cfg.warmup = warmup;
    let scn = &scenario.inner.scenario;
    let report = py.detach(|| engine::run(scn, &cfg)).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &report)
}

/// Runs the auxiliary-variable controller and returns its report.
#[pyfunction]
#[pyo3(signature = (scenario, v, horizon = 100_000, seed = 1))]
fn aux_run<'py>(py: Python<'py>, scenario: &Scenario, v: f64, horizon: u64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let aux = scenario.inner.aux.as_ref().ok_or_else(|| PyValueError::new_err("scenario has no [aux] table"))?;
    let cfg = RunConfig::new(v, Discipline::Fifo, horizon, seed);
    let scn = &scenario.inner.scenario;
    let report = py.detach(|| auxctrl::aux_run(scn, aux, &cfg)).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &report)
}

#[pymodule]
fn bpsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(builtin_names, m)?)?;
    m.add_function(wrap_pyfunction!(load_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(bp_decide, m)?)?;
    m.add_function(wrap_pyfunction!(aux_bp_decide, m)?)?;
    m.add_function(wrap_pyfunction!(dual_value, m)?)?;
    m.add_function(wrap_pyfunction!(solve_dual, m)?)?;
    m.add_function(wrap_pyfunction!(check_slackness, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(aux_run, m)?)?;
    Ok(())
}
