//! Python bindings: load scenarios, simulate, check traces and query the
//! server game. Structured results come back as plain dicts.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use ratreg::adversary::choose_strategy;
use ratreg::checker::{check_all, cost_report};
use ratreg::game::{attack_threshold as threshold_of, Belief, PayoffParams};
use ratreg::report::{ProtocolRow, Report as CoreReport, VerdictDocument};
use ratreg::scenario::{parse_scenario, run_experiment, Scenario as CoreScenario};
use ratreg::variants::Protocol;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn protocols(spec: Option<&str>, fallback: Protocol) -> PyResult<Vec<Protocol>> {
    match spec {
        None => Ok(vec![fallback]),
        Some("all") => Ok(Protocol::ALL.to_vec()),
        Some(tag) => Ok(vec![tag.parse().map_err(err)?]),
    }
}

/// A validated scenario.
#[pyclass(module = "pyratreg")]
struct Scenario {
    inner: CoreScenario,
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: parse_scenario(text).map_err(err)? })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| err(format!("{path}: {e}")))?;
        Self::from_toml(&text)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn protocol(&self) -> String {
        self.inner.protocol.to_string()
    }

    #[setter]
    fn set_protocol(&mut self, tag: &str) -> PyResult<()> {
        self.inner.protocol = tag.parse().map_err(err)?;
        Ok(())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn n_servers(&self) -> usize {
        self.inner.n_servers()
    }

    #[getter]
    fn n_clients(&self) -> usize {
        self.inner.n_clients
    }

    /// Runs one seed (the scenario's own by default).
    #[pyo3(signature = (seed=None))]
    fn simulate(&self, py: Python<'_>, seed: Option<u64>) -> PyResult<Trace> {
        let seed = seed.unwrap_or(self.inner.seed);
        let inner = py.detach(|| self.inner.simulate(seed)).map_err(err)?;
        Ok(Trace { inner })
    }

    /// Runs a seeded batch. `protocol` may be a tag or "all".
    #[pyo3(signature = (runs=None, protocol=None, check=true))]
    fn run(&self, py: Python<'_>, runs: Option<u64>, protocol: Option<&str>, check: bool) -> PyResult<Report> {
        let runs = runs.unwrap_or(self.inner.run.runs);
        let list = protocols(protocol, self.inner.protocol)?;
        let rows = py.detach(|| {
            list.iter()
                .map(|&p| {
                    let mut s = self.inner.clone();
                    s.protocol = p;
                    run_experiment(&s, runs, check).map(|r| ProtocolRow::from_runs(p, &r))
                })
                .collect::<ratreg::Result<Vec<_>>>()
        });
        Ok(Report { inner: CoreReport::new(&self.inner.name, self.inner.seed, rows.map_err(err)?) })
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, protocol={}, n_servers={}, n_clients={})",
            self.inner.name,
            self.inner.protocol,
            self.inner.n_servers(),
            self.inner.n_clients
        )
    }
}

/// One recorded execution.
#[pyclass(module = "pyratreg")]
struct Trace {
    inner: ratreg::trace::Trace,
}

#[pymethods]
impl Trace {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ratreg::trace::Trace::from_jsonl(text).map_err(err)? })
    }

    fn to_jsonl(&self) -> String {
        self.inner.to_jsonl()
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    /// Verdict dict; `passed` is the overall result.
    fn check<'py>(&self, py: Python<'py>, scenario: &Scenario) -> PyResult<Bound<'py, PyAny>> {
        if self.inner.header.n_servers != scenario.inner.n_servers() {
            return Err(err("trace and scenario disagree on the number of servers"));
        }
        to_py(py, &VerdictDocument::new(check_all(&self.inner, &scenario.inner.profiles)))
    }

    fn cost<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &cost_report(&self.inner))
    }
}

#[pyclass(module = "pyratreg")]
struct Report {
    inner: CoreReport,
}

#[pymethods]
impl Report {
    #[getter]
    fn passed(&self) -> bool {
        self.inner.passed()
    }

    fn to_table(&self) -> String {
        self.inner.to_table()
    }

    fn to_json(&self) -> String {
        self.inner.to_machine()
    }

    fn rows<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.rows)
    }
}

/// Belief above which attacking stops paying off.
#[pyfunction]
fn attack_threshold(gs: f64, ds: f64) -> PyResult<f64> {
    threshold_of(&PayoffParams::server(gs, ds).map_err(err)?).map_err(err)
}

/// Best response of a rational server, with the expected gains of each strategy.
#[pyfunction]
fn best_response<'py>(py: Python<'py>, theta: f64, gs: f64, ds: f64) -> PyResult<Bound<'py, PyDict>> {
    let payoffs = PayoffParams::server(gs, ds).map_err(err)?;
    let choice = choose_strategy(Belief::new(theta).map_err(err)?, &payoffs).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("strategy", choice.strategy.to_string())?;
    out.set_item("attack", choice.gains[0])?;
    out.set_item("not_attack", choice.gains[1])?;
    out.set_item("silent", choice.gains[2])?;
    Ok(out)
}

#[pymodule]
fn pyratreg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<Trace>()?;
    m.add_class::<Report>()?;
    m.add_function(wrap_pyfunction!(attack_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(best_response, m)?)?;
    m.add("PROTOCOLS", Protocol::ALL.iter().map(|p| p.to_string()).collect::<Vec<_>>())?;
    Ok(())
}
