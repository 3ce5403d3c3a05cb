//! Python bindings. Structured values cross the boundary as JSON or TOML
//! strings so the Rust types stay the single source of truth.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fairfl::data::{FederatedDataset, Sample};
use fairfl::experiment::{self, ExperimentConfig};
use fairfl::fairness::{Criterion, DisparityReport, FairnessSpec, Scopes};
use fairfl::oracle::{solve_primal_lp, DiscreteInstance, OracleMode};
use fairfl::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Numeric(_) | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Run one experiment from a TOML config; returns the report as JSON.
#[pyfunction]
pub fn run_experiment(config_toml: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(to_py)?;
    json(&experiment::run(&cfg).map_err(to_py)?.report)
}

/// Run the config's sweep grid; returns per-config summaries and the
/// monotonicity check as JSON.
#[pyfunction]
pub fn run_sweep(config_toml: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml(config_toml).map_err(to_py)?;
    let out = experiment::sweep(&cfg).map_err(to_py)?;
    let errors: Vec<Option<String>> = out.results.iter().map(|r| r.as_ref().err().map(|e| e.to_string())).collect();
    json(&serde_json::json!({ "groups": out.groups, "monotonicity": out.monotonicity, "errors": errors }))
}

/// The built-in default config as TOML.
#[pyfunction]
pub fn default_config() -> PyResult<String> {
    ExperimentConfig::default().to_toml().map_err(to_py)
}

/// Disparity report of predictions; `clients` gives each sample's client.
#[pyfunction]
#[pyo3(signature = (labels, groups, clients, predictions, criterion = "dp"))]
pub fn disparity_report(
    labels: Vec<usize>,
    groups: Vec<usize>,
    clients: Vec<usize>,
    predictions: Vec<usize>,
    criterion: &str,
) -> PyResult<String> {
    let n = labels.len();
    if groups.len() != n || clients.len() != n || predictions.len() != n || n == 0 {
        return Err(PyValueError::new_err("labels, groups, clients and predictions must be non-empty and equal length"));
    }
    let criterion: Criterion = parse(criterion)?;
    let nk = clients.iter().max().unwrap() + 1;
    let nm = labels.iter().chain(&predictions).max().unwrap() + 1;
    let na = groups.iter().max().unwrap() + 1;
    let mut shards = vec![Vec::new(); nk];
    let mut preds = vec![Vec::new(); nk];
    for i in 0..n {
        shards[clients[i]].push(Sample::new(vec![0.0], labels[i], groups[i]));
        preds[clients[i]].push(predictions[i]);
    }
    let data = FederatedDataset::new(shards, nm.max(2), na).map_err(to_py)?;
    json(&DisparityReport::evaluate(&data, &preds, criterion).map_err(to_py)?)
}

/// Random finite instance `P(x, a, y, k)` as JSON.
#[pyfunction]
pub fn random_instance(points: usize, groups: usize, classes: usize, clients: usize, seed: u64) -> PyResult<String> {
    DiscreteInstance::random(points, groups, classes, clients, seed).to_json().map_err(to_py)
}

/// Optimal randomized classifier of a JSON instance; returns the solution as JSON.
#[pyfunction]
#[pyo3(signature = (instance_json, criterion = "dp", xi_global = 0.05, xi_local = 0.05, scopes = "both", blind = false))]
pub fn solve_lp(
    instance_json: &str,
    criterion: &str,
    xi_global: f64,
    xi_local: f64,
    scopes: &str,
    blind: bool,
) -> PyResult<String> {
    let instance = DiscreteInstance::from_json(instance_json).map_err(to_py)?;
    let spec = FairnessSpec::new(parse(criterion)?, xi_global, xi_local, parse::<Scopes>(scopes)?);
    let mode = if blind { OracleMode::AttributeBlind } else { OracleMode::AttributeAware };
    json(&solve_primal_lp(&instance, &spec, mode).map_err(to_py)?)
}

#[pyfunction]
pub fn cost_sensitive_loss(scores: Vec<f64>, cost: Vec<f64>) -> PyResult<f64> {
    fairfl::model::cost_sensitive_loss(&scores, &cost).map_err(to_py)
}

#[pyfunction]
pub fn sigma_beta(values: Vec<f64>, beta: f64) -> PyResult<f64> {
    if values.is_empty() || !(beta > 0.0) {
        return Err(PyValueError::new_err("need a non-empty vector and beta > 0"));
    }
    Ok(fairfl::postprocessing::sigma_beta(&values, beta))
}

#[pymodule]
fn fairfl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(disparity_report, m)?)?;
    m.add_function(wrap_pyfunction!(random_instance, m)?)?;
    m.add_function(wrap_pyfunction!(solve_lp, m)?)?;
    m.add_function(wrap_pyfunction!(cost_sensitive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_beta, m)?)?;
    Ok(())
}
