use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{default_thermo_template, replicate_mean, timed_thermo, Check, ExperimentError, ScalingReport};
use crate::environment::{DisorderLaw, EnvironmentRealization, PinningParams};
use crate::estimators::{FreeEnergyEstimate, Method, ThermoConfig};
use crate::io::{ReportPoint, RowContext};
use crate::lattice::Lattice;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationConfig {
    pub d: usize,
    pub n: usize,
    pub law: DisorderLaw,
    pub params: PinningParams,
    /// Cutoffs `H`; rewards with `|w| > H` are set to zero.
    pub cutoffs: Vec<f64>,
    pub replicates: usize,
    pub env_seed: u64,
    pub dyn_seed: u64,
    pub thermo: ThermoConfig,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            d: 2,
            n: 8,
            law: DisorderLaw::StandardGaussian,
            params: PinningParams { a: 1.0, b: 1.0, h: 0.0 },
            cutoffs: vec![1.0, 2.0, 3.0],
            replicates: 20,
            env_seed: 13,
            dyn_seed: 14,
            thermo: default_thermo_template(),
        }
    }
}

/// `Δ(H) = f(e) - f(e^H)` per disorder replicate, integrated along the path
/// from the truncated rewards to the full ones.
pub fn run_truncation_check(cfg: &TruncationConfig) -> Result<ScalingReport, ExperimentError> {
    if cfg.cutoffs.is_empty() || cfg.replicates < 2 {
        return Err(ExperimentError::Config("need at least one cutoff and two replicates".into()));
    }
    if cfg.cutoffs.iter().any(|&h| !(h >= 0.0)) {
        return Err(ExperimentError::Config("cutoffs must be nonnegative".into()));
    }
    let mut cutoffs = cfg.cutoffs.clone();
    cutoffs.sort_by(f64::total_cmp);
    let lattice = Arc::new(Lattice::new(cfg.d, cfg.n)?);
    let mut report = ScalingReport::new("truncation", serde_json::to_value(cfg).unwrap_or_default());
    report.seeds.insert("env_seed".into(), cfg.env_seed);
    report.seeds.insert("dyn_seed".into(), cfg.dyn_seed);

    let envs: Vec<EnvironmentRealization> = (0..cfg.replicates as u64)
        .map(|r| EnvironmentRealization::sample(cfg.law, cfg.params, &lattice, derive_seed(cfg.env_seed, &[r])))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..cutoffs.len())
        .flat_map(|k| (0..cfg.replicates).map(move |r| (k, r)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(k, r)| {
            let cut = envs[r].truncated(cutoffs[k]);
            let seed = derive_seed(cfg.dyn_seed, &[k as u64, r as u64]);
            if cut.rewards() == envs[r].rewards() {
                return Ok((seed, FreeEnergyEstimate::zero(Method::ThermoIntegration), 0.0, true));
            }
            let (est, wall) = timed_thermo(&lattice, cfg.params.a, cut.rewards(), envs[r].rewards(), &cfg.thermo, seed, || {
                format!("H={} replicate={r}", cutoffs[k])
            })?;
            Ok((seed, est, wall, false))
        })
        .collect::<Vec<Result<_, ExperimentError>>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let ctx = RowContext {
        experiment: "truncation".into(),
        d: cfg.d,
        n: cfg.n,
        law: cfg.law,
        params: cfg.params,
    };
    let mut per_cutoff = Vec::new();
    for (k, &h) in cutoffs.iter().enumerate() {
        let mut deltas = Vec::new();
        let mut untouched = true;
        for (&(kk, r), (seed, est, wall, exact)) in jobs.iter().zip(&results) {
            if kk != k {
                continue;
            }
            report.rows.push(ctx.estimate_row(&format!("delta_H{h}"), r as u64, *seed, est, *wall));
            deltas.push(est.value);
            untouched &= *exact;
        }
        let (mean, se) = replicate_mean(&deltas);
        let abs: Vec<f64> = deltas.iter().map(|d| d.abs()).collect();
        let (abs_mean, abs_se) = if untouched { (0.0, 0.0) } else { replicate_mean(&abs) };
        for (series, v, s) in [("delta", mean, se), ("abs_delta", abs_mean, abs_se)] {
            report.points.push(ReportPoint {
                series: series.into(),
                x: h,
                n: cfg.n,
                value: if untouched { 0.0 } else { v },
                std_error: if untouched { 0.0 } else { s },
                replicates: deltas.len(),
                used_in_fit: false,
            });
        }
        per_cutoff.push((h, abs_mean, abs_se, untouched));
    }

    let mut decreasing = true;
    let mut detail = Vec::new();
    for w in per_cutoff.windows(2) {
        let ((h0, d0, s0, u0), (h1, d1, s1, _)) = (w[0], w[1]);
        if u0 {
            continue;
        }
        decreasing &= d0 - d1 > (s0 * s0 + s1 * s1).sqrt();
        detail.push(format!("|D({h0})| = {d0:.3e}+-{s0:.1e} -> |D({h1})| = {d1:.3e}+-{s1:.1e}"));
    }
    if per_cutoff.len() >= 2 && !per_cutoff[0].3 {
        report
            .checks
            .push(Check::new("abs_delta_decreasing", decreasing, detail.join("; ")));
    }
    let exact: Vec<String> = per_cutoff.iter().filter(|c| c.3).map(|c| c.0.to_string()).collect();
    if !exact.is_empty() {
        report.checks.push(Check::new(
            "no_truncation_gives_zero",
            true,
            format!("no reward exceeds H = {}; delta is exactly 0", exact.join(", ")),
        ));
    }
    Ok(report.finalize())
}
