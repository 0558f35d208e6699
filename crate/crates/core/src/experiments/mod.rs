//! Studies that confront simulation output with the analytic statements:
//! quenched-annealed gap, annealed scaling, pinned-set domination, box
//! doubling, height tails, the d = 2 variance law and reward truncation.
//!
//! Every driver fans independent jobs (grid point, replicate, quadrature
//! node) out over the current rayon pool and reduces the results in a fixed
//! order, so the output does not depend on the number of workers.

mod bound;
mod doubling;
mod domination;
mod gap;
mod scaling;
mod tail;
mod truncation;
mod variance;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bound::{evaluate_gap_bound, gap_bound_at, two_point_closed_form, BoundError, GapBoundSpec, Regime, GAUSSIAN_TOLERANCE};
pub use doubling::{run_box_doubling, BoxDoublingConfig};
pub use domination::{domination_rate, run_domination_test, DominationConfig, DominationPoint, DominationReport, TestSet, TestSetResult};
pub use gap::{run_gap_experiment, GapConfig};
pub use scaling::{run_annealed_scaling, scaling_abscissa, ScalingConfig};
pub use tail::{run_tail_check, TailConfig};
pub use truncation::{run_truncation_check, TruncationConfig};
pub use variance::{central_sites, conditional_second_moment, run_variance_d2, VarianceConfig};

use crate::environment::EnvironmentError;
use crate::estimators::{free_energy_thermo_path, EstimatorError, FreeEnergyEstimate, ThermoConfig};
use crate::io::{EstimateRow, ReportPoint};
use crate::lattice::{Lattice, LatticeError};
use crate::oracle::OracleError;
use crate::sampler::SamplerError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("job {job} failed: {source}")]
    Job {
        job: String,
        #[source]
        source: EstimatorError,
    },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Not enough statistics to decide.
    Guard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            status: if passed { CheckStatus::Pass } else { CheckStatus::Fail },
            detail,
        }
    }

    pub fn guard(name: &str, detail: String) -> Self {
        Self {
            name: name.to_string(),
            status: CheckStatus::Guard,
            detail,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Grid of estimates, fits and checks produced by one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub experiment: String,
    pub params: serde_json::Value,
    pub points: Vec<ReportPoint>,
    pub fits: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub verdict: Verdict,
    pub seeds: BTreeMap<String, u64>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<EstimateRow>,
}

impl ScalingReport {
    pub fn new(experiment: &str, params: serde_json::Value) -> Self {
        Self {
            experiment: experiment.to_string(),
            params,
            points: Vec::new(),
            fits: BTreeMap::new(),
            checks: Vec::new(),
            verdict: Verdict::Inconclusive,
            seeds: BTreeMap::new(),
            notes: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Fail if any check failed, inconclusive if any hit a guard, else pass.
    pub fn finalize(mut self) -> Self {
        self.verdict = if self.checks.iter().any(|c| c.status == CheckStatus::Fail) {
            Verdict::Fail
        } else if self.checks.is_empty() || self.checks.iter().any(|c| c.status == CheckStatus::Guard) {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        };
        self
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn series(&self, name: &str) -> Vec<&ReportPoint> {
        self.points.iter().filter(|p| p.series == name).collect()
    }
}

/// A thermodynamic-integration job with its wall time.
pub(crate) fn timed_thermo(
    lattice: &Arc<Lattice>,
    a: f64,
    start: &[f64],
    end: &[f64],
    template: &ThermoConfig,
    seed: u64,
    job: impl FnOnce() -> String,
) -> Result<(FreeEnergyEstimate, f64), ExperimentError> {
    let cfg = ThermoConfig {
        seed,
        ..template.clone()
    };
    let t0 = Instant::now();
    let est = free_energy_thermo_path(lattice, a, start, end, &cfg)
        .map_err(|source| ExperimentError::Job { job: job(), source })?;
    Ok((est, t0.elapsed().as_secs_f64()))
}

/// Mean over replicates with the standard error of the mean.
pub(crate) fn replicate_mean(values: &[f64]) -> (f64, f64) {
    if values.len() < 2 {
        return (values.first().copied().unwrap_or(f64::NAN), f64::INFINITY);
    }
    let m = crate::stats::mean_iid(values);
    (m.mean, m.std_error)
}

/// Thermodynamic-integration template with a sweep budget suited to
/// replicated experiments.
pub fn default_thermo_template() -> ThermoConfig {
    ThermoConfig {
        sweeps: 2000,
        max_sweeps: 8000,
        ..ThermoConfig::default()
    }
}
