use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{default_thermo_template, replicate_mean, timed_thermo, Check, ExperimentError, ScalingReport};
use crate::environment::{DisorderLaw, EnvironmentRealization, PinningParams};
use crate::estimators::ThermoConfig;
use crate::io::{ReportPoint, RowContext};
use crate::lattice::Lattice;
use crate::rng::derive_seed;
use crate::stats::{variance, variance_std_error};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDoublingConfig {
    pub d: usize,
    /// Box sides, each twice the previous one.
    pub sizes: Vec<usize>,
    pub law: DisorderLaw,
    pub params: PinningParams,
    pub replicates: usize,
    pub env_seed: u64,
    pub dyn_seed: u64,
    pub thermo: ThermoConfig,
}

impl Default for BoxDoublingConfig {
    fn default() -> Self {
        Self {
            d: 2,
            sizes: vec![4, 8, 16],
            law: DisorderLaw::BernoulliPm1,
            params: PinningParams { a: 1.0, b: 1.0, h: 0.0 },
            replicates: 30,
            env_seed: 5,
            dyn_seed: 6,
            thermo: default_thermo_template(),
        }
    }
}

/// Sub-box hierarchy of the largest box: level 0 is the box itself, level
/// `k + 1` holds the `2^d` halves of every level-`k` box. Each entry maps the
/// sub-box sites to sites of the largest box.
struct Hierarchy {
    lattices: Vec<Arc<Lattice>>,
    maps: Vec<Vec<Vec<usize>>>,
}

fn hierarchy(d: usize, top: usize, levels: usize) -> Result<Hierarchy, ExperimentError> {
    let root = Lattice::new(d, top)?;
    let mut lattices = vec![Arc::new(root)];
    let mut maps = vec![vec![(0..lattices[0].volume()).collect::<Vec<_>>()]];
    for k in 1..levels {
        let (sub, local) = lattices[k - 1]
            .split_in_halves()
            .ok_or_else(|| ExperimentError::Config(format!("cannot halve a box of side {}", lattices[k - 1].side())))?;
        let next: Vec<Vec<usize>> = maps[k - 1]
            .iter()
            .flat_map(|parent| local.iter().map(move |m| m.iter().map(|&s| parent[s]).collect()))
            .collect();
        lattices.push(Arc::new(sub));
        maps.push(next);
    }
    Ok(Hierarchy { lattices, maps })
}

/// Free energies of a box and all its dyadic sub-boxes under one disorder
/// draw. Reports the disorder variance per side and the subadditivity defect
/// `f(Λ_2n) - mean f(Λ_n)` over the `2^d` halves.
pub fn run_box_doubling(cfg: &BoxDoublingConfig) -> Result<ScalingReport, ExperimentError> {
    let mut sizes = cfg.sizes.clone();
    sizes.sort_unstable();
    if sizes.len() < 2 || sizes.windows(2).any(|w| w[1] != 2 * w[0]) {
        return Err(ExperimentError::Config("sizes must be a doubling chain like 4, 8, 16".into()));
    }
    if cfg.replicates < 2 {
        return Err(ExperimentError::Config("need at least two replicates".into()));
    }
    let levels = sizes.len();
    let top = *sizes.last().unwrap_or(&0);
    let h = hierarchy(cfg.d, top, levels)?;
    let mut report = ScalingReport::new("box_doubling", serde_json::to_value(cfg).unwrap_or_default());
    report.seeds.insert("env_seed".into(), cfg.env_seed);
    report.seeds.insert("dyn_seed".into(), cfg.dyn_seed);

    let envs: Vec<EnvironmentRealization> = (0..cfg.replicates as u64)
        .map(|r| EnvironmentRealization::sample(cfg.law, cfg.params, &h.lattices[0], derive_seed(cfg.env_seed, &[r])))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.replicates)
        .flat_map(|r| {
            let maps = &h.maps;
            (0..levels).flat_map(move |k| (0..maps[k].len()).map(move |b| (r, k, b)))
        })
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(r, k, b)| {
            let lattice = &h.lattices[k];
            let env = envs[r].restrict(&h.maps[k][b]);
            let seed = derive_seed(cfg.dyn_seed, &[r as u64, k as u64, b as u64]);
            let zeros = vec![0.0; lattice.volume()];
            let (est, wall) = timed_thermo(lattice, cfg.params.a, &zeros, env.rewards(), &cfg.thermo, seed, || {
                format!("replicate={r} side={} box={b}", lattice.side())
            })?;
            Ok((seed, est, wall))
        })
        .collect::<Vec<Result<_, ExperimentError>>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;

    // f[level][replicate][box]
    let mut f = vec![vec![Vec::new(); cfg.replicates]; levels];
    for (&(r, k, b), (seed, est, wall)) in jobs.iter().zip(&results) {
        let ctx = RowContext {
            experiment: "box_doubling".into(),
            d: cfg.d,
            n: h.lattices[k].side(),
            law: cfg.law,
            params: cfg.params,
        };
        report.rows.push(ctx.estimate_row(&format!("f_box{b}"), r as u64, *seed, est, *wall));
        f[k][r].push(est.value);
    }

    let children = 1usize << cfg.d;
    let mut var_by_side = Vec::new();
    let mut defect_by_side = Vec::new();
    for k in (0..levels).rev() {
        let side = h.lattices[k].side();
        let all: Vec<f64> = f[k].iter().flatten().copied().collect();
        let var = variance(&all);
        let var_se = variance_std_error(&all);
        let (mean, mean_se) = replicate_mean(&all);
        report.points.push(ReportPoint {
            series: "mean_f".into(),
            x: side as f64,
            n: side,
            value: mean,
            std_error: mean_se,
            replicates: all.len(),
            used_in_fit: false,
        });
        report.points.push(ReportPoint {
            series: "variance".into(),
            x: side as f64,
            n: side,
            value: var,
            std_error: var_se,
            replicates: all.len(),
            used_in_fit: false,
        });
        var_by_side.push((side, var, var_se));
        if k + 1 < levels {
            // children of box b at level k are boxes b*2^d .. (b+1)*2^d at level k+1
            let defects: Vec<f64> = (0..cfg.replicates)
                .flat_map(|r| {
                    let parents = &f[k][r];
                    let kids = &f[k + 1][r];
                    parents.iter().enumerate().map(move |(b, &fp)| {
                        let avg = kids[b * children..(b + 1) * children].iter().sum::<f64>() / children as f64;
                        fp - avg
                    })
                })
                .collect();
            let (dm, dse) = replicate_mean(&defects);
            report.points.push(ReportPoint {
                series: "defect".into(),
                x: side as f64,
                n: side,
                value: dm,
                std_error: dse,
                replicates: defects.len(),
                used_in_fit: false,
            });
            defect_by_side.push((side, dm, dse));
        }
    }

    let mut decreasing = true;
    let mut detail = Vec::new();
    for w in var_by_side.windows(2) {
        let ((n0, v0, s0), (n1, v1, s1)) = (w[0], w[1]);
        let ok = v0 - v1 > (s0 * s0 + s1 * s1).sqrt();
        decreasing &= ok;
        detail.push(format!("Var f({n0}) = {v0:.3e}+-{s0:.1e}, Var f({n1}) = {v1:.3e}+-{s1:.1e}"));
    }
    report.checks.push(Check::new("variance_decreasing", decreasing, detail.join("; ")));

    if defect_by_side.len() >= 2 {
        // defect_by_side runs from the smallest parent side upward
        for &(side, dm, _) in &defect_by_side {
            report.fits.insert(format!("defect_{side}"), dm);
        }
        let mut shrinking = true;
        let mut detail = Vec::new();
        for w in defect_by_side.windows(2) {
            let ((n0, d0, s0), (n1, d1, s1)) = (w[0], w[1]);
            shrinking &= d1.abs() < d0.abs();
            detail.push(format!(
                "|defect({n0})| = {:.3e}+-{s0:.1e}, |defect({n1})| = {:.3e}+-{s1:.1e}",
                d0.abs(),
                d1.abs()
            ));
        }
        report.checks.push(Check::new("defect_shrinks", shrinking, detail.join("; ")));
    } else {
        report.notes.push("two sizes give one defect level; no shrinkage check".into());
    }
    Ok(report.finalize())
}
