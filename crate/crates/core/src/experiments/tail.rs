use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::variance::central_sites;
use super::{Check, ExperimentError, ScalingReport};
use crate::environment::{DisorderLaw, EnvironmentRealization, PinningParams};
use crate::io::{ReportPoint, RowContext};
use crate::lattice::Lattice;
use crate::normal;
use crate::oracle::GreenFunction;
use crate::rng::derive_seed;
use crate::sampler::{default_burn_in, run_chain, FieldState, ModelSpec, SweepOrder};
use crate::stats::{batch_means, linear_fit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailConfig {
    pub sizes: Vec<usize>,
    pub law: DisorderLaw,
    pub params: PinningParams,
    pub env_seed: u64,
    /// Thresholds `T`; exceedance is `|φ| > T + c3 log n`.
    pub thresholds: Vec<f64>,
    pub c3: f64,
    pub burn_in: Option<u64>,
    pub sweeps: u64,
    pub blocks: usize,
    pub order: SweepOrder,
    pub dyn_seed: u64,
    /// Points with fewer exceedances than this are reported but not judged.
    pub min_count: usize,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self {
            sizes: vec![16, 32, 64],
            law: DisorderLaw::Constant,
            params: PinningParams { a: 1.0, b: 0.0, h: 0.1f64.ln_1p() },
            env_seed: 17,
            thresholds: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
            c3: 0.0,
            burn_in: None,
            sweeps: 10_000,
            blocks: 32,
            order: SweepOrder::Checkerboard,
            dyn_seed: 18,
            min_count: 50,
        }
    }
}

struct Curve {
    seed: u64,
    wall: f64,
    green: f64,
    // (threshold, P̂, SE, exceedance count)
    points: Vec<(f64, f64, f64, usize)>,
}

/// Exceedance curves `P(|φ_center| > T + c3 log n)` in `d = 2`, compared with
/// the free field and with an envelope `exp(-C₂ T² / log n)`.
pub fn run_tail_check(cfg: &TailConfig) -> Result<ScalingReport, ExperimentError> {
    if cfg.sizes.is_empty() || cfg.thresholds.is_empty() {
        return Err(ExperimentError::Config("need at least one size and one threshold".into()));
    }
    if cfg.sizes.iter().any(|&n| n < 2) {
        return Err(ExperimentError::Config("box sides must be at least 2".into()));
    }
    let mut thresholds = cfg.thresholds.clone();
    thresholds.sort_by(f64::total_cmp);
    let mut report = ScalingReport::new("tail", serde_json::to_value(cfg).unwrap_or_default());
    report.seeds.insert("env_seed".into(), cfg.env_seed);
    report.seeds.insert("dyn_seed".into(), cfg.dyn_seed);

    let curves = cfg
        .sizes
        .par_iter()
        .map(|&n| {
            let t0 = Instant::now();
            let lattice = Arc::new(Lattice::new(2, n)?);
            let env = EnvironmentRealization::sample(cfg.law, cfg.params, &lattice, derive_seed(cfg.env_seed, &[n as u64]))?;
            let model = ModelSpec::with_rewards(lattice.clone(), cfg.params.a, env.rewards().to_vec())?;
            let centers = central_sites(&lattice);
            let green = GreenFunction::matrix_free(&lattice, 1e-12).entry(centers[0], centers[0])?;
            let shift = cfg.c3 * (n as f64).ln();
            let seed = derive_seed(cfg.dyn_seed, &[n as u64]);
            let mut state = FieldState::zeros(lattice.volume(), seed);
            let burn_in = cfg.burn_in.unwrap_or_else(|| default_burn_in(2, n));
            let mut series = vec![Vec::with_capacity(cfg.sweeps as usize); thresholds.len()];
            let mut counts = vec![0usize; thresholds.len()];
            run_chain(&mut state, &model, cfg.order, burn_in, cfg.sweeps, |s| {
                for (j, &t) in thresholds.iter().enumerate() {
                    let k = centers.iter().filter(|&&x| s.phi[x].abs() > t + shift).count();
                    counts[j] += k;
                    series[j].push(k as f64 / centers.len() as f64);
                }
            });
            let points = thresholds
                .iter()
                .zip(&series)
                .zip(&counts)
                .map(|((&t, s), &c)| {
                    let bm = batch_means(s, cfg.blocks);
                    (t, bm.mean, bm.std_error, c)
                })
                .collect();
            Ok(Curve {
                seed,
                wall: t0.elapsed().as_secs_f64(),
                green,
                points,
            })
        })
        .collect::<Vec<Result<_, ExperimentError>>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let attractive = cfg.params.b == 0.0 && cfg.params.h >= 0.0;
    let mut in_unit = true;
    let mut below_free = true;
    let mut free_detail = Vec::new();
    let mut c2 = f64::INFINITY;
    for (&n, curve) in cfg.sizes.iter().zip(&curves) {
        let ctx = RowContext {
            experiment: "tail".into(),
            d: 2,
            n,
            law: cfg.law,
            params: cfg.params,
        };
        let log_n = (n as f64).ln();
        let shift = cfg.c3 * log_n;
        let sd = curve.green.sqrt();
        report.points.push(ReportPoint {
            series: "green_diagonal".into(),
            x: n as f64,
            n,
            value: curve.green,
            std_error: 0.0,
            replicates: 0,
            used_in_fit: true,
        });
        let mut usable = Vec::new();
        for &(t, p, se, count) in &curve.points {
            in_unit &= (0.0..=1.0).contains(&p);
            let free = 2.0 * normal::cdf(-(t + shift) / sd);
            let ok = count >= cfg.min_count;
            report
                .rows
                .push(ctx.observable_row(&format!("exceedance_T{t}"), "mcmc", 0, curve.seed, p, se, cfg.sweeps, curve.wall));
            report.points.push(ReportPoint {
                series: format!("exceedance_n{n}"),
                x: t,
                n,
                value: p,
                std_error: se,
                replicates: 1,
                used_in_fit: ok,
            });
            report.points.push(ReportPoint {
                series: format!("free_exceedance_n{n}"),
                x: t,
                n,
                value: free,
                std_error: 0.0,
                replicates: 0,
                used_in_fit: false,
            });
            if ok {
                if attractive && p > free + 3.0 * se {
                    below_free = false;
                    free_detail.push(format!("n={n} T={t}: {p:.4} > free {free:.4}"));
                }
                if t > 0.0 && p > 0.0 {
                    c2 = c2.min(-p.ln() * log_n / (t * t));
                }
                usable.push((t, p, se));
            }
        }
        // discrete concavity of log P̂ on the usable part of the curve
        let mut concave = true;
        let mut strictly_decreasing = true;
        for w in usable.windows(2) {
            strictly_decreasing &= w[1].1 < w[0].1;
        }
        for w in usable.windows(3) {
            let l: Vec<f64> = w.iter().map(|p| p.1.ln()).collect();
            let s: Vec<f64> = w.iter().map(|p| p.2 / p.1).collect();
            let h0 = w[1].0 - w[0].0;
            let h1 = w[2].0 - w[1].0;
            let second = (l[2] - l[1]) / h1 - (l[1] - l[0]) / h0;
            let second_se = ((s[2] / h1).powi(2) + (s[1] * (1.0 / h0 + 1.0 / h1)).powi(2) + (s[0] / h0).powi(2)).sqrt();
            concave &= second <= 3.0 * second_se;
        }
        if usable.len() >= 3 {
            report.checks.push(Check::new(
                &format!("log_exceedance_concave_decreasing_n{n}"),
                concave && strictly_decreasing,
                format!("{} thresholds with at least {} exceedances", usable.len(), cfg.min_count),
            ));
        } else {
            report.checks.push(Check::guard(
                &format!("log_exceedance_concave_decreasing_n{n}"),
                format!("only {} thresholds with at least {} exceedances", usable.len(), cfg.min_count),
            ));
        }
    }

    report.checks.push(Check::new(
        "exceedance_in_unit_interval",
        in_unit,
        "all exceedance estimates lie in [0, 1]".into(),
    ));
    if c2.is_finite() {
        report.fits.insert("c2_envelope".into(), c2);
        report.checks.push(Check::new(
            "gaussian_envelope",
            c2 > 0.0,
            format!("P <= exp(-C2 T^2 / log n) holds with C2 = {c2:.4} (C1 = 1)"),
        ));
    } else {
        report
            .checks
            .push(Check::guard("gaussian_envelope", "no threshold T > 0 with enough exceedances".into()));
    }
    if attractive {
        report.checks.push(Check::new(
            "below_free_field",
            below_free,
            if free_detail.is_empty() { "pinned exceedance <= free field + 3 SE".into() } else { free_detail.join("; ") },
        ));
    }
    if cfg.sizes.len() >= 2 {
        let x: Vec<f64> = cfg.sizes.iter().map(|&n| (n as f64).ln()).collect();
        let y: Vec<f64> = curves.iter().map(|c| c.green).collect();
        if let Some(fit) = linear_fit(&x, &y, None) {
            report.fits.insert("green_log_slope".into(), fit.slope);
            report.fits.insert("green_log_r_squared".into(), fit.r_squared);
        }
    }
    Ok(report.finalize())
}
