//! Free-energy estimators and field observables.
//!
//! Free energies are per site and relative to the free field,
//! `f = |Λ|⁻¹ log(Z^w / Z⁰)`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{annealed_strength, DisorderLaw, EnvironmentError, EnvironmentRealization, PinningParams};
use crate::lattice::Lattice;
use crate::normal::ln_add_exp;
use crate::oracle::{ExactSampler, OracleError, RectTable};
use crate::quadrature::gauss_legendre_on;
use crate::rng::derive_seed;
use crate::sampler::{default_burn_in, run_chain, sweep, FieldState, ModelSpec, SamplerError, SweepOrder};
use crate::stats::{self, batch_means, BatchMeans};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("chain at quadrature node {node} (t = {t:.4}) failed the stationarity check: |z| = {z:.2} > {limit}")]
    NonConvergence { node: usize, t: f64, z: f64, limit: f64 },
    #[error("importance weights degenerate: effective sample size {ess:.1} < {min}")]
    DegenerateWeights { ess: f64, min: f64 },
    #[error("too few samples: {got} < {needed}")]
    TooFewSamples { got: u64, needed: u64 },
    #[error("reward path endpoints have lengths {start} and {end}, box has {volume}")]
    PathMismatch { start: usize, end: usize, volume: usize },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ThermoIntegration,
    Importance,
    OracleExpansion,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ThermoIntegration => "thermo_integration",
            Method::Importance => "importance",
            Method::OracleExpansion => "oracle_expansion",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    /// Measurement sweeps summed over nodes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_autocorr_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_geweke: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terms: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyEstimate {
    pub value: f64,
    pub std_error: f64,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

impl FreeEnergyEstimate {
    pub fn zero(method: Method) -> Self {
        Self {
            value: 0.0,
            std_error: 0.0,
            method,
            diagnostics: Diagnostics::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermoConfig {
    /// Gauss–Legendre nodes on `t ∈ [0, 1]`.
    pub nodes: usize,
    /// Burn-in sweeps per node; `None` uses [`default_burn_in`].
    pub burn_in: Option<u64>,
    /// Measurement sweeps per node before autocorrelation-driven extension.
    pub sweeps: u64,
    /// Upper bound on measurement sweeps per node.
    pub max_sweeps: u64,
    pub blocks: usize,
    pub order: SweepOrder,
    pub seed: u64,
    /// Stationarity threshold on the early-vs-late z-score.
    pub max_geweke: f64,
}

impl Default for ThermoConfig {
    fn default() -> Self {
        Self {
            nodes: 16,
            burn_in: None,
            sweeps: 4000,
            max_sweeps: 16_000,
            blocks: 32,
            order: SweepOrder::Checkerboard,
            seed: 0,
            max_geweke: 6.0,
        }
    }
}

struct NodeResult {
    mean: f64,
    se: f64,
    sweeps: u64,
    tau: f64,
    geweke: f64,
}

fn run_node(
    lattice: &Arc<Lattice>,
    a: f64,
    start: &[f64],
    end: &[f64],
    t: f64,
    node: usize,
    cfg: &ThermoConfig,
) -> Result<NodeResult, EstimatorError> {
    let rewards: Vec<f64> = start.iter().zip(end).map(|(s, e)| s + t * (e - s)).collect();
    let delta: Vec<(usize, f64)> = start
        .iter()
        .zip(end)
        .enumerate()
        .filter(|(_, (s, e))| e != s)
        .map(|(x, (s, e))| (x, e - s))
        .collect();
    let model = ModelSpec::with_rewards(lattice.clone(), a, rewards)?;
    let mut state = FieldState::zeros(lattice.volume(), derive_seed(cfg.seed, &[node as u64]));
    let burn_in = cfg.burn_in.unwrap_or_else(|| default_burn_in(lattice.dim(), lattice.side()));
    let integrand = |s: &FieldState| -> f64 {
        delta
            .iter()
            .filter(|&&(x, _)| s.phi[x].abs() <= a)
            .map(|&(_, dw)| dw)
            .sum()
    };
    let mut series = Vec::with_capacity(cfg.sweeps as usize);
    run_chain(&mut state, &model, cfg.order, burn_in, cfg.sweeps, |s| series.push(integrand(s)));
    let mut tau = stats::integrated_autocorr_time(&series);
    // blocks should span several autocorrelation times
    let wanted = (cfg.blocks as f64 * (8.0 * tau).ceil()) as u64;
    if wanted > series.len() as u64 && cfg.max_sweeps > cfg.sweeps {
        let extra = wanted.min(cfg.max_sweeps) - series.len() as u64;
        for _ in 0..extra {
            sweep(&mut state, &model, cfg.order);
            series.push(integrand(&state));
        }
        tau = stats::integrated_autocorr_time(&series);
    }
    let bm = batch_means(&series, cfg.blocks);
    let geweke = stats::geweke_z(&series, 0.1, 0.5);
    if geweke.abs() > cfg.max_geweke {
        return Err(EstimatorError::NonConvergence {
            node,
            t,
            z: geweke,
            limit: cfg.max_geweke,
        });
    }
    Ok(NodeResult {
        mean: bm.mean,
        se: bm.std_error,
        sweeps: series.len() as u64,
        tau,
        geweke,
    })
}

/// `|Λ|⁻¹ (log Z^{end} - log Z^{start})` by integrating
/// `d/dt log Z_t = Σ_x (end_x - start_x) ⟨1{|φ_x| <= a}⟩_t` along the straight
/// reward path. Each node runs an independent chain from the zero field.
pub fn free_energy_thermo_path(
    lattice: &Arc<Lattice>,
    a: f64,
    start: &[f64],
    end: &[f64],
    cfg: &ThermoConfig,
) -> Result<FreeEnergyEstimate, EstimatorError> {
    let v = lattice.volume();
    if start.len() != v || end.len() != v {
        return Err(EstimatorError::PathMismatch {
            start: start.len(),
            end: end.len(),
            volume: v,
        });
    }
    if start == end {
        return Ok(FreeEnergyEstimate {
            diagnostics: Diagnostics {
                nodes: Some(cfg.nodes),
                sweeps: Some(0),
                ..Diagnostics::default()
            },
            ..FreeEnergyEstimate::zero(Method::ThermoIntegration)
        });
    }
    if cfg.sweeps < 2 * cfg.blocks as u64 {
        return Err(EstimatorError::TooFewSamples {
            got: cfg.sweeps,
            needed: 2 * cfg.blocks as u64,
        });
    }
    let (ts, ws) = gauss_legendre_on(cfg.nodes, 0.0, 1.0);
    let results = ts
        .par_iter()
        .enumerate()
        .map(|(i, &t)| run_node(lattice, a, start, end, t, i, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut value = 0.0;
    let mut var = 0.0;
    for (r, w) in results.iter().zip(&ws) {
        value += w * r.mean;
        var += w * w * r.se * r.se;
    }
    let vf = v as f64;
    Ok(FreeEnergyEstimate {
        value: value / vf,
        std_error: var.sqrt() / vf,
        method: Method::ThermoIntegration,
        diagnostics: Diagnostics {
            nodes: Some(cfg.nodes),
            sweeps: Some(results.iter().map(|r| r.sweeps).sum()),
            burn_in: Some(cfg.burn_in.unwrap_or_else(|| default_burn_in(lattice.dim(), lattice.side()))),
            max_autocorr_time: Some(results.iter().map(|r| r.tau).fold(0.0, f64::max)),
            max_abs_geweke: Some(results.iter().map(|r| r.geweke.abs()).fold(0.0, f64::max)),
            ..Diagnostics::default()
        },
    })
}

/// Thermodynamic integration from the free field to the rewards of `env`.
pub fn free_energy_thermo(
    lattice: &Arc<Lattice>,
    env: &EnvironmentRealization,
    cfg: &ThermoConfig,
) -> Result<FreeEnergyEstimate, EstimatorError> {
    let zeros = vec![0.0; lattice.volume()];
    free_energy_thermo_path(lattice, env.params.a, &zeros, env.rewards(), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceConfig {
    pub samples: u64,
    pub seed: u64,
    /// Jackknife groups.
    pub groups: usize,
    pub min_ess: f64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 0,
            groups: 64,
            min_ess: 100.0,
        }
    }
}

/// `|Λ|⁻¹ log` of the mean of `exp(Σ_x w_x 1{|φ_x| <= a})` over exact
/// free-field draws, with a jackknife error on the logarithm.
pub fn free_energy_importance(
    lattice: &Lattice,
    rewards: &[f64],
    a: f64,
    cfg: &ImportanceConfig,
) -> Result<FreeEnergyEstimate, EstimatorError> {
    let v = lattice.volume();
    if rewards.len() != v {
        return Err(SamplerError::VolumeMismatch {
            expected: v,
            got: rewards.len(),
        }
        .into());
    }
    if rewards.iter().all(|&w| w == 0.0) {
        return Ok(FreeEnergyEstimate {
            diagnostics: Diagnostics {
                samples: Some(cfg.samples),
                ess: Some(cfg.samples as f64),
                ..Diagnostics::default()
            },
            ..FreeEnergyEstimate::zero(Method::Importance)
        });
    }
    let groups = cfg.groups.max(2) as u64;
    if cfg.samples < groups {
        return Err(EstimatorError::TooFewSamples {
            got: cfg.samples,
            needed: groups,
        });
    }
    let sampler = ExactSampler::new(lattice, cfg.seed)?;
    let per = cfg.samples / groups;
    // per group: (log Σ weight, log Σ weight², count)
    let sums: Vec<(f64, f64, u64)> = (0..groups)
        .into_par_iter()
        .map(|g| {
            let lo = g * per;
            let hi = if g + 1 == groups { cfg.samples } else { lo + per };
            let mut phi = vec![0.0; v];
            let mut l1 = f64::NEG_INFINITY;
            let mut l2 = f64::NEG_INFINITY;
            for i in lo..hi {
                sampler.draw_into(i, &mut phi);
                let lw: f64 = phi
                    .iter()
                    .zip(rewards)
                    .filter(|(p, _)| p.abs() <= a)
                    .map(|(_, w)| w)
                    .sum();
                l1 = ln_add_exp(l1, lw);
                l2 = ln_add_exp(l2, 2.0 * lw);
            }
            (l1, l2, hi - lo)
        })
        .collect();
    let total1 = sums.iter().fold(f64::NEG_INFINITY, |acc, s| ln_add_exp(acc, s.0));
    let total2 = sums.iter().fold(f64::NEG_INFINITY, |acc, s| ln_add_exp(acc, s.1));
    let n = cfg.samples as f64;
    let ess = (2.0 * total1 - total2).exp();
    if ess < cfg.min_ess {
        return Err(EstimatorError::DegenerateWeights {
            ess,
            min: cfg.min_ess,
        });
    }
    let full = total1 - n.ln();
    let jk = stats::jackknife(groups as usize, full, |g| {
        let rest = sums
            .iter()
            .enumerate()
            .filter(|&(h, _)| h != g)
            .fold(f64::NEG_INFINITY, |acc, (_, s)| ln_add_exp(acc, s.0));
        rest - ((cfg.samples - sums[g].2) as f64).ln()
    });
    let vf = v as f64;
    Ok(FreeEnergyEstimate {
        value: full / vf,
        std_error: jk.std_error / vf,
        method: Method::Importance,
        diagnostics: Diagnostics {
            samples: Some(cfg.samples),
            ess: Some(ess),
            ..Diagnostics::default()
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum EstimatorChoice {
    ThermoIntegration(ThermoConfig),
    Importance(ImportanceConfig),
    OracleExpansion,
}

/// Runs the chosen estimator on explicit rewards.
pub fn free_energy(
    lattice: &Arc<Lattice>,
    rewards: &[f64],
    a: f64,
    choice: &EstimatorChoice,
) -> Result<FreeEnergyEstimate, EstimatorError> {
    match choice {
        EstimatorChoice::ThermoIntegration(cfg) => {
            let zeros = vec![0.0; lattice.volume()];
            free_energy_thermo_path(lattice, a, &zeros, rewards, cfg)
        }
        EstimatorChoice::Importance(cfg) => free_energy_importance(lattice, rewards, a, cfg),
        EstimatorChoice::OracleExpansion => Ok(RectTable::new(lattice, a)?.free_energy(rewards)?),
    }
}

/// The annealed free energy: the homogeneous model at strength `ℓ`.
pub fn annealed_free_energy(
    law: &DisorderLaw,
    params: &PinningParams,
    lattice: &Arc<Lattice>,
    choice: &EstimatorChoice,
) -> Result<FreeEnergyEstimate, EstimatorError> {
    let ell = annealed_strength(law, params)?.ell;
    if ell == 0.0 {
        return Ok(FreeEnergyEstimate::zero(method_of(choice)));
    }
    free_energy(lattice, &vec![ell; lattice.volume()], params.a, choice)
}

pub fn method_of(choice: &EstimatorChoice) -> Method {
    match choice {
        EstimatorChoice::ThermoIntegration(_) => Method::ThermoIntegration,
        EstimatorChoice::Importance(_) => Method::Importance,
        EstimatorChoice::OracleExpansion => Method::OracleExpansion,
    }
}

/// A per-sweep scalar series with its batch-means error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSeries {
    pub values: Vec<f64>,
    pub batch: BatchMeans,
    pub autocorr_time: f64,
}

impl ObservableSeries {
    pub fn from_values(values: Vec<f64>, blocks: usize) -> Self {
        let batch = batch_means(&values, blocks.max(8));
        let autocorr_time = stats::integrated_autocorr_time(&values);
        Self {
            values,
            batch,
            autocorr_time,
        }
    }
}

/// `|A| / |Λ|` per sweep.
pub fn pinned_density(densities: Vec<f64>, blocks: usize) -> ObservableSeries {
    ObservableSeries::from_values(densities, blocks)
}

/// Runs a chain and records the pinned density after each measurement sweep.
pub fn measure_pinned_density(
    model: &ModelSpec,
    seed: u64,
    order: SweepOrder,
    burn_in: u64,
    sweeps: u64,
    blocks: usize,
) -> ObservableSeries {
    let v = model.lattice().volume();
    let a = model.a();
    let mut state = FieldState::zeros(v, seed);
    let mut out = Vec::with_capacity(sweeps as usize);
    run_chain(&mut state, model, order, burn_in, sweeps, |s| {
        out.push(s.phi.iter().filter(|p| p.abs() <= a).count() as f64 / v as f64);
    });
    pinned_density(out, blocks)
}

/// Log-linear fit `log C(k) ≈ c - m k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassFit {
    pub mass: f64,
    pub mass_se: f64,
    pub window: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPointEstimate {
    pub axis: usize,
    pub separations: Vec<usize>,
    /// Connected correlation `⟨φ_c φ_{c+k u}⟩ - ⟨φ_c⟩⟨φ_{c+k u}⟩`, averaged
    /// over both directions along the axis.
    pub correlation: Vec<f64>,
    pub correlation_se: Vec<f64>,
    pub mass: Option<MassFit>,
}

impl TwoPointEstimate {
    pub fn variance(&self) -> (f64, f64) {
        (self.correlation[0], self.correlation_se[0])
    }
}

/// Records the heights along an axis through `origin` at each measurement.
#[derive(Debug, Clone)]
pub struct TwoPointAccumulator {
    origin: usize,
    axis: usize,
    separations: Vec<usize>,
    // (separation index, partner site) pairs
    partners: Vec<(usize, usize)>,
    origin_series: Vec<f64>,
    partner_series: Vec<Vec<f64>>,
}

impl TwoPointAccumulator {
    /// Separations `0..=max_sep`, with `max_sep` capped so that at least one
    /// partner stays inside the box.
    pub fn new(lattice: &Lattice, origin: usize, axis: usize, max_sep: usize) -> Self {
        let mut separations = Vec::new();
        let mut partners = Vec::new();
        for k in 0..=max_sep {
            let mut any = false;
            let dirs: &[isize] = if k == 0 { &[0] } else { &[-1, 1] };
            for &dir in dirs {
                if let Some(y) = lattice.offset(origin, axis, dir * k as isize) {
                    partners.push((separations.len(), y));
                    any = true;
                }
            }
            if !any {
                break;
            }
            separations.push(k);
        }
        let count = partners.len();
        Self {
            origin,
            axis,
            separations,
            partners,
            origin_series: Vec::new(),
            partner_series: vec![Vec::new(); count],
        }
    }

    pub fn record(&mut self, phi: &[f64]) {
        self.origin_series.push(phi[self.origin]);
        for (j, &(_, y)) in self.partners.iter().enumerate() {
            self.partner_series[j].push(phi[y]);
        }
    }

    pub fn len(&self) -> usize {
        self.origin_series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin_series.is_empty()
    }

    pub fn finish(&self, blocks: usize) -> TwoPointEstimate {
        variance_and_twopoint(self, blocks)
    }
}

/// Connected correlations with batch-means errors, and the mass from the
/// largest initial window of separations where the signal exceeds three
/// standard errors (at least two points).
pub fn variance_and_twopoint(acc: &TwoPointAccumulator, blocks: usize) -> TwoPointEstimate {
    let s = acc.origin_series.len();
    let m0 = stats::mean(&acc.origin_series);
    let mut sums = vec![0.0; acc.separations.len()];
    let mut counts = vec![0usize; acc.separations.len()];
    let mut ses = vec![0.0f64; acc.separations.len()];
    for (j, &(k_idx, _)) in acc.partners.iter().enumerate() {
        let ys = &acc.partner_series[j];
        let my = stats::mean(ys);
        let prod: Vec<f64> = (0..s)
            .map(|i| (acc.origin_series[i] - m0) * (ys[i] - my))
            .collect();
        let bm = batch_means(&prod, blocks.max(8));
        sums[k_idx] += bm.mean;
        // the two directions are strongly correlated; do not pretend otherwise
        ses[k_idx] = ses[k_idx].max(bm.std_error);
        counts[k_idx] += 1;
    }
    let correlation: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let mass = fit_mass(&acc.separations, &correlation, &ses);
    TwoPointEstimate {
        axis: acc.axis,
        separations: acc.separations.clone(),
        correlation,
        correlation_se: ses,
        mass,
    }
}

fn fit_mass(seps: &[usize], corr: &[f64], se: &[f64]) -> Option<MassFit> {
    let mut end = 0;
    while end < seps.len() && corr[end] > 3.0 * se[end] && corr[end] > 0.0 {
        end += 1;
    }
    if end < 2 {
        return None;
    }
    let x: Vec<f64> = seps[..end].iter().map(|&k| k as f64).collect();
    let y: Vec<f64> = corr[..end].iter().map(|c| c.ln()).collect();
    // weights from the delta method: Var(log C) ≈ (se / C)²
    let w: Vec<f64> = (0..end).map(|i| (corr[i] / se[i].max(1e-300)).powi(2)).collect();
    let fit = stats::linear_fit(&x, &y, Some(&w))?;
    let mass = -fit.slope;
    if !(mass >= 0.0) {
        return None;
    }
    Some(MassFit {
        mass,
        mass_se: fit.slope_se,
        window: (seps[0], seps[end - 1]),
    })
}
