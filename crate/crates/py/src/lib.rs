//! Python bindings. Structured values cross the boundary as plain dicts and
//! lists; exact numbers travel as decimal or fraction strings.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde::de::DeserializeOwned;
use serde::Serialize;

use orfit_core::dfpo::{self, CorrectionRecord, DfpoConfig, RolloutGroup};
use orfit_core::diff as structural;
use orfit_core::eval;
use orfit_core::executor::DefaultExecutor;
use orfit_core::formulation::{self, Formulation};
use orfit_core::rational::{format_rational, parse_rational, Rational};
use orfit_core::response;
use orfit_core::reward::{self, RewardConfig};
use orfit_core::solver::{self, SolverOptions, Tolerance, DEFAULT_NODE_BUDGET};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Accepts a JSON string or any value `json.dumps` understands.
fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = if obj.is_instance_of::<PyString>() {
        obj.extract()?
    } else {
        obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?
    };
    serde_json::from_str(&text).map_err(value_err)
}

fn rational(text: &str) -> PyResult<Rational> {
    parse_rational(text).map_err(value_err)
}

/// A validated linear or mixed-integer model.
#[pyclass(name = "Formulation", module = "orfit", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFormulation {
    inner: Formulation,
}

#[pymethods]
impl PyFormulation {
    /// Parse a JSON model document.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyFormulation { inner: formulation::parse_formulation(text).map_err(value_err)? })
    }

    fn to_json(&self) -> String {
        formulation::serialize_formulation(&self.inner)
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &formulation::formulation_to_value(&self.inner))
    }

    #[getter]
    fn variable_names(&self) -> Vec<String> {
        self.inner.variables.iter().map(|v| v.name.clone()).collect()
    }

    #[getter]
    fn constraint_count(&self) -> usize {
        self.inner.constraints.len()
    }

    /// Solve exactly. Returns status, objective and assignment.
    #[pyo3(signature = (relax = false, node_budget = DEFAULT_NODE_BUDGET))]
    fn solve<'py>(&self, py: Python<'py>, relax: bool, node_budget: u64) -> PyResult<Bound<'py, PyAny>> {
        let f = if relax { solver::relax_integrality(&self.inner) } else { self.inner.clone() };
        let result = py.detach(|| solver::solve_with(&f, &SolverOptions { node_budget }));
        to_py(py, &result)
    }

    fn __repr__(&self) -> String {
        format!(
            "Formulation(variables={}, constraints={})",
            self.inner.variables.len(),
            self.inner.constraints.len()
        )
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// Split a tagged response into think, model and code sections.
#[pyfunction]
fn parse_response<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &response::parse_tagged_response(text).map_err(value_err)?)
}

/// Structural differences of `pred` against `gold`, with the error ratio as a fraction string.
#[pyfunction]
fn diff<'py>(py: Python<'py>, pred: &PyFormulation, gold: &PyFormulation) -> PyResult<Bound<'py, PyAny>> {
    let report = structural::diff(&pred.inner, &gold.inner);
    let out = serde_json::json!({
        "error_ratio": format_rational(&structural::error_ratio(&report)),
        "report": report,
    });
    to_py(py, &out)
}

#[pyfunction]
fn error_ratio(pred: &PyFormulation, gold: &PyFormulation) -> String {
    format_rational(&structural::error_ratio(&structural::diff(&pred.inner, &gold.inner)))
}

/// Graded closeness of a predicted objective to the ground truth, in [0, 1].
#[pyfunction]
fn fidelity(pred: &str, gt: &str) -> PyResult<f64> {
    Ok(reward::fidelity_reward(&rational(pred)?, &rational(gt)?))
}

#[pyfunction]
#[pyo3(signature = (a, b, rel = 1e-6, abs = 1e-6))]
fn is_equivalent(a: &str, b: &str, rel: f64, abs: f64) -> PyResult<bool> {
    Ok(solver::is_equivalent(&rational(a)?, &rational(b)?, &Tolerance { rel, abs }))
}

/// Full reward breakdown for one response. Script code is not run here.
#[pyfunction]
#[pyo3(signature = (response, gt, alpha = 0.2, substitution = true, length_penalty = true))]
fn score<'py>(
    py: Python<'py>,
    response: &str,
    gt: &str,
    alpha: f64,
    substitution: bool,
    length_penalty: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = RewardConfig { alpha, substitution, apply_length_penalty: length_penalty, ..RewardConfig::default() };
    cfg.validate().map_err(value_err)?;
    let gt = rational(gt)?;
    let breakdown = py.detach(|| reward::score_text(response, &gt, &cfg, &DefaultExecutor::default()));
    to_py(py, &breakdown)
}

#[pyfunction]
#[pyo3(signature = (rewards, std_epsilon = 1e-8))]
fn group_advantages(rewards: Vec<f64>, std_epsilon: f64) -> Vec<f64> {
    dfpo::group_advantages(&rewards, std_epsilon)
}

/// "rl", "sft" or "discarded".
#[pyfunction]
#[pyo3(signature = (correct, group_size, gamma = 0.8))]
fn classify_group(correct: usize, group_size: usize, gamma: f64) -> &'static str {
    match dfpo::classify(correct, group_size, gamma) {
        dfpo::Bucket::Rl => "rl",
        dfpo::Bucket::Sft => "sft",
        dfpo::Bucket::Discarded => "discarded",
    }
}

/// Compose a batch from rollout groups and corrections, then compute the
/// combined loss and its per-token gradient coefficients.
#[pyfunction]
#[pyo3(signature = (groups, corrections = None, config = None))]
fn dfpo_loss<'py>(
    py: Python<'py>,
    groups: &Bound<'py, PyAny>,
    corrections: Option<&Bound<'py, PyAny>>,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyAny>> {
    let groups: Vec<RolloutGroup> = from_py(groups)?;
    let corrections: Vec<CorrectionRecord> = corrections.map(from_py).transpose()?.unwrap_or_default();
    let cfg: DfpoConfig = config.map(from_py).transpose()?.unwrap_or_default();
    let batch = dfpo::compose_training_batch(groups, corrections, &cfg).map_err(value_err)?;
    let report = dfpo::dfpo_loss(&batch).map_err(value_err)?;
    to_py(py, &report)
}

/// Exact mean of per-benchmark accuracies given as decimal or fraction strings.
#[pyfunction]
fn macro_average(values: Vec<String>) -> PyResult<String> {
    let values = values.iter().map(|v| rational(v)).collect::<PyResult<Vec<_>>>()?;
    Ok(format_rational(&eval::macro_average(&values)))
}

/// Half-up decimal rendering of an exact value.
#[pyfunction]
#[pyo3(signature = (value, places = 1))]
fn format_half_up(value: &str, places: u32) -> PyResult<String> {
    Ok(eval::format_half_up(&rational(value)?, places))
}

#[pymodule]
pub fn orfit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFormulation>()?;
    m.add_function(wrap_pyfunction!(parse_response, m)?)?;
    m.add_function(wrap_pyfunction!(diff, m)?)?;
    m.add_function(wrap_pyfunction!(error_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(is_equivalent, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(group_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(classify_group, m)?)?;
    m.add_function(wrap_pyfunction!(dfpo_loss, m)?)?;
    m.add_function(wrap_pyfunction!(macro_average, m)?)?;
    m.add_function(wrap_pyfunction!(format_half_up, m)?)?;
    Ok(())
}
