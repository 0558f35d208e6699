//! Python access to the estimators and experiments.

use std::sync::Arc;

use gffpin::environment::{DisorderLaw, EnvironmentRealization, PinningParams};
use gffpin::estimators::{free_energy as estimate, EstimatorChoice, ImportanceConfig, ThermoConfig};
use gffpin::experiments::{
    run_annealed_scaling, run_box_doubling, run_domination_test, run_gap_experiment, run_tail_check,
    run_truncation_check, run_variance_d2, BoxDoublingConfig, DominationConfig, GapConfig, ScalingConfig, TailConfig,
    TruncationConfig, VarianceConfig,
};
use gffpin::lattice::Lattice;
use gffpin::oracle::RectTable;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn lattice(d: usize, n: usize) -> PyResult<Arc<Lattice>> {
    Lattice::new(d, n).map(Arc::new).map_err(value_err)
}

/// Site rewards `b e_x + h` drawn from `law` with the given seed.
#[pyfunction]
#[pyo3(signature = (d, n, law, a, b, h, seed))]
fn sample_environment(d: usize, n: usize, law: &str, a: f64, b: f64, h: f64, seed: u64) -> PyResult<Vec<f64>> {
    let law: DisorderLaw = law.parse().map_err(value_err)?;
    let params = PinningParams::new(a, b, h).map_err(value_err)?;
    let env = EnvironmentRealization::sample(law, params, &*lattice(d, n)?, seed).map_err(value_err)?;
    Ok(env.rewards().to_vec())
}

/// Exact free energy by subset expansion; boxes of at most 12 sites.
#[pyfunction]
fn oracle_free_energy(py: Python<'_>, d: usize, n: usize, a: f64, rewards: Vec<f64>) -> PyResult<f64> {
    let l = lattice(d, n)?;
    py.detach(|| RectTable::new(&l, a).and_then(|t| t.free_energy(&rewards)))
        .map(|e| e.value)
        .map_err(runtime_err)
}

/// Returns `(value, std_error, method)`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (d, n, a, rewards, method = "thermo", budget = None, seed = 0))]
fn free_energy(
    py: Python<'_>,
    d: usize,
    n: usize,
    a: f64,
    rewards: Vec<f64>,
    method: &str,
    budget: Option<u64>,
    seed: u64,
) -> PyResult<(f64, f64, String)> {
    let l = lattice(d, n)?;
    let choice = match method {
        "thermo" => {
            let mut cfg = ThermoConfig {
                seed,
                ..ThermoConfig::default()
            };
            if let Some(b) = budget {
                cfg.sweeps = b;
                cfg.max_sweeps = cfg.max_sweeps.max(4 * b);
            }
            EstimatorChoice::ThermoIntegration(cfg)
        }
        "importance" => EstimatorChoice::Importance(ImportanceConfig {
            samples: budget.unwrap_or(ImportanceConfig::default().samples),
            seed,
            ..ImportanceConfig::default()
        }),
        "oracle" => EstimatorChoice::OracleExpansion,
        other => return Err(value_err(format!("unknown method `{other}`"))),
    };
    let est = py.detach(|| estimate(&l, &rewards, a, &choice)).map_err(runtime_err)?;
    Ok((est.value, est.std_error, est.method.to_string()))
}

/// Conditional probability that a site with neighbour mean `mean` is pinned.
#[pyfunction]
fn pin_probability(mean: f64, a: f64, w: f64) -> f64 {
    gffpin::sampler::pin_probability(mean, a, w)
}

/// Overlays `overrides` (a JSON object) on the default configuration.
fn merged<T: Serialize + DeserializeOwned>(default: T, overrides: &str) -> PyResult<T> {
    let mut base = serde_json::to_value(default).map_err(runtime_err)?;
    let extra: Value = serde_json::from_str(if overrides.trim().is_empty() { "{}" } else { overrides }).map_err(value_err)?;
    match (&mut base, extra) {
        (Value::Object(b), Value::Object(e)) => b.extend(e),
        _ => return Err(value_err("configuration must be a JSON object")),
    }
    serde_json::from_value(base).map_err(value_err)
}

fn report_json<T: Serialize>(r: T) -> PyResult<String> {
    serde_json::to_string(&r).map_err(runtime_err)
}

/// Runs an experiment by name and returns its report as JSON.
///
/// `config` holds field overrides for the experiment's default configuration.
#[pyfunction]
#[pyo3(signature = (name, config = "{}"))]
fn run_experiment(py: Python<'_>, name: &str, config: &str) -> PyResult<String> {
    macro_rules! go {
        ($cfg:ty, $run:ident) => {{
            let cfg: $cfg = merged(<$cfg>::default(), config)?;
            let r = py.detach(|| $run(&cfg)).map_err(runtime_err)?;
            report_json(r)
        }};
    }
    match name {
        "gap" => go!(GapConfig, run_gap_experiment),
        "scaling" => go!(ScalingConfig, run_annealed_scaling),
        "domination" => go!(DominationConfig, run_domination_test),
        "box-doubling" | "box_doubling" => go!(BoxDoublingConfig, run_box_doubling),
        "tail" => go!(TailConfig, run_tail_check),
        "variance-d2" | "variance_d2" => go!(VarianceConfig, run_variance_d2),
        "truncation" => go!(TruncationConfig, run_truncation_check),
        other => Err(value_err(format!("unknown experiment `{other}`"))),
    }
}

#[pymodule(name = "gffpin")]
fn gffpin_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(sample_environment, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_free_energy, m)?)?;
    m.add_function(wrap_pyfunction!(free_energy, m)?)?;
    m.add_function(wrap_pyfunction!(pin_probability, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
