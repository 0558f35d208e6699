use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Check, ExperimentError, ScalingReport};
use crate::environment::{DisorderLaw, PinningParams};
use crate::io::{ReportPoint, RowContext};
use crate::lattice::Lattice;
use crate::rng::derive_seed;
use crate::sampler::{default_burn_in, run_chain, FieldState, ModelSpec, SweepOrder};
use crate::stats::{batch_means, fit_through_origin};

/// Finite site sets `B` around the box center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestSet {
    Singleton,
    AdjacentPair,
    /// Two sites `n / 4` on either side of the center along the first axis.
    FarPair,
    /// Cube of the given side with its low corner near the center.
    Block { side: usize },
}

impl TestSet {
    pub fn defaults() -> Vec<TestSet> {
        vec![
            TestSet::Singleton,
            TestSet::AdjacentPair,
            TestSet::FarPair,
            TestSet::Block { side: 2 },
            TestSet::Block { side: 3 },
        ]
    }

    pub fn label(&self) -> String {
        match self {
            TestSet::Singleton => "singleton".into(),
            TestSet::AdjacentPair => "adjacent_pair".into(),
            TestSet::FarPair => "far_pair".into(),
            TestSet::Block { side } => format!("block{side}"),
        }
    }

    pub fn sites(&self, lattice: &Lattice) -> Option<Vec<usize>> {
        let c = lattice.center();
        match *self {
            TestSet::Singleton => Some(vec![c]),
            TestSet::AdjacentPair => Some(vec![c, lattice.offset(c, 0, 1)?]),
            TestSet::FarPair => {
                let k = (lattice.side() / 4) as isize;
                if k == 0 {
                    return None;
                }
                Some(vec![lattice.offset(c, 0, -k)?, lattice.offset(c, 0, k)?])
            }
            TestSet::Block { side } => {
                if side == 0 || side > lattice.side() {
                    return None;
                }
                let mut corner = c;
                for axis in 0..lattice.dim() {
                    corner = lattice.offset(corner, axis, -((side / 2) as isize))?;
                }
                let mut sites = vec![corner];
                for axis in 0..lattice.dim() {
                    let mut next = Vec::with_capacity(sites.len() * side);
                    for &s in &sites {
                        for k in 0..side {
                            next.push(lattice.offset(s, axis, k as isize)?);
                        }
                    }
                    sites = next;
                }
                Some(sites)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationConfig {
    pub d: usize,
    pub n: usize,
    pub a: f64,
    /// Homogeneous pinning strengths; the reward is `log(1 + ε)`.
    pub epsilons: Vec<f64>,
    pub test_sets: Vec<TestSet>,
    pub burn_in: Option<u64>,
    pub sweeps: u64,
    pub blocks: usize,
    pub order: SweepOrder,
    pub dyn_seed: u64,
    /// Largest allowed relative standard error of `-log P(A ∩ B = ∅)`.
    pub max_rel_error: f64,
    /// Largest allowed `max/min` of `λ̂(ε)/g(ε)` over the grid.
    pub max_spread: f64,
}

impl Default for DominationConfig {
    fn default() -> Self {
        Self {
            d: 3,
            n: 12,
            a: 1.0,
            epsilons: vec![0.0, 0.02, 0.05, 0.1, 0.2],
            test_sets: TestSet::defaults(),
            burn_in: None,
            sweeps: 4000,
            blocks: 32,
            order: SweepOrder::Checkerboard,
            dyn_seed: 7,
            max_rel_error: 0.5,
            max_spread: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSetResult {
    pub set: TestSet,
    pub size: usize,
    /// `ν(A ∩ B = ∅)`, where `A` keeps each well site independently with
    /// probability `ε / (1 + ε)`.
    pub void_probability: f64,
    pub void_se: f64,
    /// `μ(|φ_x| > a for all x ∈ B)`, the raw well occupation.
    pub well_void_probability: f64,
    pub well_void_se: f64,
    /// `(1 - λ̂)^{|B|}` with the fitted rate.
    pub product_prediction: f64,
    pub usable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationPoint {
    pub epsilon: f64,
    /// `ε |log ε|^{-1/2}` in `d = 2`, `ε` otherwise.
    pub g: f64,
    pub pin_density: f64,
    pub lambda_hat: Option<f64>,
    pub lambda_se: Option<f64>,
    pub ratio: Option<f64>,
    pub sets: Vec<TestSetResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub points: Vec<DominationPoint>,
    /// Smallest and largest `λ̂(ε)/g(ε)` over the grid.
    pub c_minus: Option<f64>,
    pub c_plus: Option<f64>,
    pub report: ScalingReport,
}

pub fn domination_rate(d: usize, eps: f64) -> f64 {
    if d == 2 && eps > 0.0 {
        eps / eps.ln().abs().sqrt()
    } else {
        eps
    }
}

struct Measured {
    seed: u64,
    wall: f64,
    sweeps: u64,
    density: (f64, f64),
    // per test set: (nu mean, se, raw mean, se)
    sets: Vec<(f64, f64, f64, f64)>,
}

/// Void probabilities of the pinned set over test sets `B` under the
/// homogeneous model, fitted to a per-site rate `λ̂(ε)` and compared with
/// `g(ε)`.
pub fn run_domination_test(cfg: &DominationConfig) -> Result<DominationReport, ExperimentError> {
    if cfg.epsilons.is_empty() || cfg.test_sets.is_empty() {
        return Err(ExperimentError::Config("need at least one epsilon and one test set".into()));
    }
    if cfg.epsilons.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
        return Err(ExperimentError::Config("epsilon values must be finite and nonnegative".into()));
    }
    if cfg.d == 2 && cfg.epsilons.iter().any(|&e| e >= 1.0) {
        return Err(ExperimentError::Config("d = 2 rate g(eps) needs eps < 1".into()));
    }
    let lattice = Arc::new(Lattice::new(cfg.d, cfg.n)?);
    let sets: Vec<Vec<usize>> = cfg
        .test_sets
        .iter()
        .map(|t| {
            t.sites(&lattice)
                .ok_or_else(|| ExperimentError::Config(format!("test set {} does not fit in a box of side {}", t.label(), cfg.n)))
        })
        .collect::<Result<_, _>>()?;
    let burn_in = cfg.burn_in.unwrap_or_else(|| default_burn_in(cfg.d, cfg.n));
    let mut report = ScalingReport::new("domination", serde_json::to_value(cfg).unwrap_or_default());
    report.seeds.insert("dyn_seed".into(), cfg.dyn_seed);

    let measured = cfg
        .epsilons
        .par_iter()
        .enumerate()
        .map(|(i, &eps)| {
            let t0 = Instant::now();
            let w = eps.ln_1p();
            let rho = eps / (1.0 + eps);
            let model = ModelSpec::with_rewards(lattice.clone(), cfg.a, vec![w; lattice.volume()])?;
            let seed = derive_seed(cfg.dyn_seed, &[i as u64]);
            let mut state = FieldState::zeros(lattice.volume(), seed);
            let mut density = Vec::with_capacity(cfg.sweeps as usize);
            let mut nu = vec![Vec::with_capacity(cfg.sweeps as usize); sets.len()];
            let mut raw = vec![Vec::with_capacity(cfg.sweeps as usize); sets.len()];
            run_chain(&mut state, &model, cfg.order, burn_in, cfg.sweeps, |s| {
                let inside = |x: usize| s.phi[x].abs() <= cfg.a;
                density.push(s.phi.iter().filter(|p| p.abs() <= cfg.a).count() as f64 / s.phi.len() as f64);
                for (j, b) in sets.iter().enumerate() {
                    let k = b.iter().filter(|&&x| inside(x)).count() as i32;
                    nu[j].push((1.0 - rho).powi(k));
                    raw[j].push(if k == 0 { 1.0 } else { 0.0 });
                }
            });
            let dens = batch_means(&density, cfg.blocks);
            let per_set = nu
                .iter()
                .zip(&raw)
                .map(|(a, b)| {
                    let x = batch_means(a, cfg.blocks);
                    let y = batch_means(b, cfg.blocks);
                    (x.mean, x.std_error, y.mean, y.std_error)
                })
                .collect();
            Ok(Measured {
                seed,
                wall: t0.elapsed().as_secs_f64(),
                sweeps: cfg.sweeps,
                density: (dens.mean, dens.std_error),
                sets: per_set,
            })
        })
        .collect::<Vec<Result<_, ExperimentError>>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    let mut points = Vec::new();
    let mut in_range = true;
    for (&eps, m) in cfg.epsilons.iter().zip(&measured) {
        let ctx = RowContext {
            experiment: "domination".into(),
            d: cfg.d,
            n: cfg.n,
            law: DisorderLaw::Constant,
            params: PinningParams { a: cfg.a, b: 0.0, h: eps.ln_1p() },
        };
        report
            .rows
            .push(ctx.observable_row("pin_density", "mcmc", 0, m.seed, m.density.0, m.density.1, m.sweeps, m.wall));
        // ε = 0 has no thinning; the raw well void rate is the reference
        let use_raw = eps == 0.0;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut ws = Vec::new();
        let mut results = Vec::new();
        for ((t, b), &(p, se, pr, pr_se)) in cfg.test_sets.iter().zip(&sets).zip(&m.sets) {
            in_range &= (0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&pr);
            let (q, q_se) = if use_raw { (pr, pr_se) } else { (p, se) };
            let y = -q.ln();
            let y_se = q_se / q;
            let usable = q > 0.0 && y > 0.0 && y_se <= cfg.max_rel_error * y;
            if usable {
                xs.push(b.len() as f64);
                ys.push(y);
                ws.push(1.0 / y_se.max(1e-15).powi(2));
            }
            report
                .rows
                .push(ctx.observable_row(&format!("void_{}", t.label()), "mcmc", 0, m.seed, p, se, m.sweeps, m.wall));
            report.rows.push(ctx.observable_row(
                &format!("well_void_{}", t.label()),
                "mcmc",
                0,
                m.seed,
                pr,
                pr_se,
                m.sweeps,
                m.wall,
            ));
            results.push(TestSetResult {
                set: *t,
                size: b.len(),
                void_probability: p,
                void_se: se,
                well_void_probability: pr,
                well_void_se: pr_se,
                product_prediction: f64::NAN,
                usable,
            });
        }
        let g = domination_rate(cfg.d, eps);
        let fit = if xs.is_empty() { None } else { fit_through_origin(&xs, &ys, Some(&ws)) };
        let (lambda_hat, lambda_se) = match fit {
            Some(f) => {
                // weighted slope error from the per-set errors alone
                let sxx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x * x).sum();
                (Some(f.slope), Some(sxx.powf(-0.5).max(f.slope_se)))
            }
            None => (None, None),
        };
        if let Some(l) = lambda_hat {
            for r in &mut results {
                r.product_prediction = (1.0 - l).powi(r.size as i32);
            }
        }
        let ratio = lambda_hat.filter(|_| g > 0.0).map(|l| l / g);
        if let (Some(l), Some(se)) = (lambda_hat, lambda_se) {
            report.points.push(ReportPoint {
                series: "lambda_hat".into(),
                x: eps,
                n: cfg.n,
                value: l,
                std_error: se,
                replicates: 1,
                used_in_fit: eps > 0.0,
            });
            if let Some(r) = ratio {
                report.points.push(ReportPoint {
                    series: "ratio".into(),
                    x: eps,
                    n: cfg.n,
                    value: r,
                    std_error: se / g,
                    replicates: 1,
                    used_in_fit: true,
                });
            }
        }
        if eps > 0.0 {
            let single = results.iter().find(|r| r.set == TestSet::Singleton);
            let far = results.iter().find(|r| r.set == TestSet::FarPair);
            if let (Some(s), Some(f)) = (single, far) {
                if s.void_probability > 0.0 && f.void_probability > 0.0 {
                    report.fits.insert(
                        format!("far_pair_log_ratio_eps{eps}"),
                        f.void_probability.ln() - 2.0 * s.void_probability.ln(),
                    );
                }
            }
        }
        points.push(DominationPoint {
            epsilon: eps,
            g,
            pin_density: m.density.0,
            lambda_hat,
            lambda_se,
            ratio,
            sets: results,
        });
    }

    report.checks.push(Check::new(
        "probabilities_in_unit_interval",
        in_range,
        "every void probability estimate lies in [0, 1]".into(),
    ));
    let missing: Vec<String> = points
        .iter()
        .filter(|p| p.epsilon > 0.0 && p.ratio.is_none())
        .map(|p| p.epsilon.to_string())
        .collect();
    let ratios: Vec<f64> = points.iter().filter_map(|p| p.ratio).collect();
    let c_minus = ratios.iter().copied().reduce(f64::min);
    let c_plus = ratios.iter().copied().reduce(f64::max);
    if let (Some(lo), Some(hi)) = (c_minus, c_plus) {
        report.fits.insert("c_minus".into(), lo);
        report.fits.insert("c_plus".into(), hi);
    }
    if !missing.is_empty() {
        report.checks.push(Check::guard(
            "ratio_spread",
            format!("void events too rare or too noisy at eps = {}", missing.join(", ")),
        ));
    } else if ratios.len() >= 2 {
        let (lo, hi) = (c_minus.unwrap_or(0.0), c_plus.unwrap_or(0.0));
        let spread = hi / lo;
        report.fits.insert("ratio_spread".into(), spread);
        report.checks.push(Check::new(
            "ratio_spread",
            lo > 0.0 && spread < cfg.max_spread,
            format!("lambda_hat/g in [{lo:.4}, {hi:.4}], spread {spread:.3} (limit {})", cfg.max_spread),
        ));
    } else {
        report
            .checks
            .push(Check::guard("ratio_spread", "fewer than two positive epsilons".into()));
    }
    Ok(DominationReport {
        points,
        c_minus,
        c_plus,
        report: report.finalize(),
    })
}
