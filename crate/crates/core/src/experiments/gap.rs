use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{default_thermo_template, replicate_mean, timed_thermo, Check, ExperimentError, GapBoundSpec, Regime, ScalingReport};
use crate::environment::{annealed_strength, DisorderLaw, EnvironmentRealization, PinningParams};
use crate::estimators::ThermoConfig;
use crate::io::{ReportPoint, RowContext};
use crate::lattice::Lattice;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    pub d: usize,
    pub sizes: Vec<usize>,
    pub law: DisorderLaw,
    pub params: PinningParams,
    pub replicates: usize,
    pub env_seed: u64,
    pub dyn_seed: u64,
    pub thermo: ThermoConfig,
    /// Constant in `λ` for the analytic bound.
    pub c1: f64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            d: 2,
            sizes: vec![8, 16, 32],
            law: DisorderLaw::BernoulliPm1,
            params: PinningParams { a: 1.0, b: 1.0, h: 0.2 },
            replicates: 20,
            env_seed: 1,
            dyn_seed: 2,
            thermo: default_thermo_template(),
            c1: 1.0,
        }
    }
}

const ANNEALED: u64 = u64::MAX;

/// Quenched free energy averaged over disorder replicates against the
/// annealed free energy, per box size, next to the analytic gap bound.
pub fn run_gap_experiment(cfg: &GapConfig) -> Result<ScalingReport, ExperimentError> {
    if cfg.sizes.is_empty() || cfg.replicates < 2 {
        return Err(ExperimentError::Config("need at least one size and two replicates".into()));
    }
    let ell = annealed_strength(&cfg.law, &cfg.params)?.ell;
    let mut report = ScalingReport::new("gap", serde_json::to_value(cfg).unwrap_or_default());
    report.seeds.insert("env_seed".into(), cfg.env_seed);
    report.seeds.insert("dyn_seed".into(), cfg.dyn_seed);
    report.fits.insert("ell".into(), ell);

    let jobs: Vec<(usize, u64)> = cfg
        .sizes
        .iter()
        .flat_map(|&n| (0..cfg.replicates as u64).chain([ANNEALED]).map(move |r| (n, r)))
        .collect();
    let lattices: Vec<Arc<Lattice>> = cfg
        .sizes
        .iter()
        .map(|&n| Lattice::new(cfg.d, n).map(Arc::new))
        .collect::<Result<_, _>>()?;
    let results = jobs
        .par_iter()
        .map(|&(n, r)| {
            let lattice = &lattices[cfg.sizes.iter().position(|&m| m == n).unwrap_or(0)];
            let v = lattice.volume();
            let zeros = vec![0.0; v];
            let dyn_seed = derive_seed(cfg.dyn_seed, &[n as u64, r]);
            if r == ANNEALED {
                let rewards = vec![ell; v];
                let (est, wall) = timed_thermo(lattice, cfg.params.a, &zeros, &rewards, &cfg.thermo, dyn_seed, || {
                    format!("annealed n={n}")
                })?;
                Ok((n, r, dyn_seed, est, wall))
            } else {
                let env_seed = derive_seed(cfg.env_seed, &[n as u64, r]);
                let env = EnvironmentRealization::sample(cfg.law, cfg.params, lattice, env_seed)?;
                let (est, wall) = timed_thermo(lattice, cfg.params.a, &zeros, env.rewards(), &cfg.thermo, dyn_seed, || {
                    format!("quenched n={n} replicate={r}")
                })?;
                Ok((n, r, env_seed, est, wall))
            }
        })
        .collect::<Vec<Result<_, ExperimentError>>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let bound = if cfg.params.b == 0.0 {
        Ok(0.0)
    } else {
        super::evaluate_gap_bound(&GapBoundSpec {
            law: cfg.law,
            params: cfg.params,
            regime: Regime::for_dim(cfg.d),
            c1: cfg.c1,
        })
    };
    match &bound {
        Ok(v) => {
            report.fits.insert("bound".into(), *v);
        }
        Err(e) => report.notes.push(format!("bound not evaluated: {e}")),
    }

    let mut last_gap = None;
    for &n in &cfg.sizes {
        let ctx = RowContext {
            experiment: "gap".into(),
            d: cfg.d,
            n,
            law: cfg.law,
            params: cfg.params,
        };
        let mut quenched = Vec::new();
        let mut annealed = None;
        for (m, r, seed, est, wall) in &results {
            if *m != n {
                continue;
            }
            if *r == ANNEALED {
                report.rows.push(ctx.estimate_row("f_annealed", 0, *seed, est, *wall));
                annealed = Some(est.clone());
            } else {
                report.rows.push(ctx.estimate_row("f_quenched", *r, *seed, est, *wall));
                quenched.push(est.value);
            }
        }
        let annealed = annealed.expect("annealed job present");
        let (fq, fq_se) = replicate_mean(&quenched);
        let gap = fq - annealed.value;
        let gap_se = (fq_se * fq_se + annealed.std_error * annealed.std_error).sqrt();
        let point = |series: &str, value: f64, se: f64, reps: usize| ReportPoint {
            series: series.into(),
            x: n as f64,
            n,
            value,
            std_error: se,
            replicates: reps,
            used_in_fit: false,
        };
        report.points.push(point("quenched", fq, fq_se, quenched.len()));
        report.points.push(point("annealed", annealed.value, annealed.std_error, 1));
        report.points.push(point("gap", gap, gap_se, quenched.len()));
        if let Ok(b) = bound {
            report.points.push(point("bound", b, 0.0, 0));
        }
        report.checks.push(Check::new(
            &format!("jensen_n{n}"),
            gap <= 3.0 * gap_se,
            format!("mean f^q - f^a = {gap:.5} (3 SE = {:.5})", 3.0 * gap_se),
        ));
        report.checks.push(Check::new(
            &format!("positivity_n{n}"),
            fq >= -3.0 * fq_se,
            format!("mean f^q = {fq:.5} (3 SE = {:.5})", 3.0 * fq_se),
        ));
        last_gap = Some((n, gap, gap_se));
    }
    if let Some((n, gap, se)) = last_gap {
        if cfg.params.b == 0.0 {
            report.checks.push(Check::new(
                "gap_zero_without_disorder",
                gap.abs() <= 3.0 * se,
                format!("n={n}: gap {gap:.5} vs 3 SE {:.5}", 3.0 * se),
            ));
        } else {
            report.checks.push(Check::new(
                "gap_nonpositive_at_largest_box",
                gap <= 3.0 * se,
                format!("n={n}: gap {gap:.5} vs 3 SE {:.5}", 3.0 * se),
            ));
            match bound {
                Ok(b) => report
                    .checks
                    .push(Check::new("bound_negative", b < 0.0, format!("bound = {b:.6e}"))),
                Err(e) => report.checks.push(Check::guard("bound_negative", e.to_string())),
            }
        }
    }
    Ok(report.finalize())
}
