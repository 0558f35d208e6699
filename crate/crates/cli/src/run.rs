use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use gffpin::environment::{EnvironmentError, EnvironmentRealization, PinningParams};
use gffpin::estimators::{
    free_energy, EstimatorChoice, EstimatorError, FreeEnergyEstimate, ImportanceConfig, Method, ObservableSeries,
    ThermoConfig,
};
use gffpin::experiments::{
    default_thermo_template, run_annealed_scaling, run_box_doubling, run_domination_test, run_gap_experiment,
    run_tail_check, run_truncation_check, run_variance_d2, BoxDoublingConfig, CheckStatus, DominationConfig, ExperimentError,
    GapConfig, ScalingConfig, ScalingReport, TailConfig, TruncationConfig, VarianceConfig, Verdict,
};
use gffpin::io::{write_points, write_results, EstimateRow, RowContext};
use gffpin::lattice::{Lattice, LatticeError};
use gffpin::oracle::{OracleError, RectTable};
use gffpin::sampler::{default_burn_in, hamiltonian, run_chain, FieldState, ModelSpec, SamplerError};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{parse_test_set, Command, MethodName, Override, Resolved};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Numerical(_) => "numerical",
            RunError::Io { .. } => "io",
        }
    }
}

impl From<ExperimentError> for RunError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(m) => RunError::Config(m),
            other => RunError::Numerical(other.to_string()),
        }
    }
}

macro_rules! numerical {
    ($($t:ty),*) => {$(
        impl From<$t> for RunError {
            fn from(e: $t) -> Self {
                RunError::Numerical(e.to_string())
            }
        }
    )*};
}
numerical!(EstimatorError, OracleError, SamplerError, EnvironmentError, LatticeError);

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything a command produced, before it is written to disk.
#[derive(Debug, Default)]
pub struct Outcome {
    pub rows: Vec<EstimateRow>,
    pub report: Option<ScalingReport>,
    /// Extra JSON artifacts keyed by file name.
    pub extra: Vec<(String, Value)>,
    /// Raw text artifacts keyed by file name.
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Vec<String>,
}

impl Outcome {
    pub fn verdict(&self) -> Option<Verdict> {
        self.report.as_ref().map(|r| r.verdict)
    }
}

fn thermo(r: &Resolved, base: ThermoConfig) -> ThermoConfig {
    let mut t = base;
    if let Some(b) = r.budget {
        t.sweeps = b;
        t.max_sweeps = t.max_sweeps.max(4 * b);
    }
    if let Some(k) = r.nodes {
        t.nodes = k;
    }
    if r.burn_in.is_some() {
        t.burn_in = r.burn_in;
    }
    if let Some(b) = r.blocks {
        t.blocks = b;
    }
    t.order = r.order;
    t
}

fn params(r: &Resolved) -> PinningParams {
    PinningParams {
        a: r.a,
        b: r.b,
        h: r.h,
    }
}

/// Sizes for multi-box experiments: explicit `experiment.sizes`, else the
/// single `model.n` when it was given, else the experiment's default.
fn sizes(r: &Resolved, default: Vec<usize>) -> Vec<usize> {
    match (&r.experiment.sizes, r.n_given) {
        (Some(s), _) => s.clone(),
        (None, true) => vec![r.n],
        (None, false) => default,
    }
}

/// The typed configuration handed to the library, serialized for the manifest.
pub enum Plan {
    Sample,
    FreeEnergy(EstimatorChoice),
    Oracle,
    Gap(GapConfig),
    Scaling(ScalingConfig),
    Domination(DominationConfig),
    BoxDoubling(BoxDoublingConfig),
    Tail(TailConfig),
    Variance(VarianceConfig),
    Truncation(TruncationConfig),
}

impl Plan {
    pub fn to_json(&self) -> Value {
        fn j<T: Serialize>(t: &T) -> Value {
            serde_json::to_value(t).unwrap_or(Value::Null)
        }
        match self {
            Plan::Sample | Plan::Oracle => Value::Null,
            Plan::FreeEnergy(c) => j(c),
            Plan::Gap(c) => j(c),
            Plan::Scaling(c) => j(c),
            Plan::Domination(c) => j(c),
            Plan::BoxDoubling(c) => j(c),
            Plan::Tail(c) => j(c),
            Plan::Variance(c) => j(c),
            Plan::Truncation(c) => j(c),
        }
    }
}

pub fn plan(r: &Resolved) -> Result<Plan, RunError> {
    let x = &r.experiment;
    Ok(match r.command {
        Command::Sample => Plan::Sample,
        Command::Oracle => Plan::Oracle,
        Command::FreeEnergy => Plan::FreeEnergy(match r.method {
            MethodName::Thermo => EstimatorChoice::ThermoIntegration(ThermoConfig {
                seed: r.dyn_seed,
                ..thermo(r, ThermoConfig::default())
            }),
            MethodName::Importance => EstimatorChoice::Importance(ImportanceConfig {
                samples: r.budget.unwrap_or(ImportanceConfig::default().samples),
                seed: r.dyn_seed,
                ..ImportanceConfig::default()
            }),
            MethodName::Oracle => EstimatorChoice::OracleExpansion,
        }),
        Command::Gap => {
            let d = GapConfig::default();
            Plan::Gap(GapConfig {
                d: r.d,
                sizes: sizes(r, d.sizes),
                law: r.law,
                params: params(r),
                replicates: x.replicates.unwrap_or(d.replicates),
                env_seed: r.env_seed,
                dyn_seed: r.dyn_seed,
                thermo: thermo(r, default_thermo_template()),
                c1: x.c1.unwrap_or(d.c1),
            })
        }
        Command::Scaling => {
            let d = ScalingConfig::default();
            Plan::Scaling(ScalingConfig {
                d: r.d,
                n: r.n,
                a: r.a,
                ells: x.ells.clone().unwrap_or(d.ells),
                dyn_seed: r.dyn_seed,
                thermo: thermo(r, default_thermo_template()),
                min_r_squared: x.min_r_squared.unwrap_or(d.min_r_squared),
                max_rel_error: d.max_rel_error,
            })
        }
        Command::Domination => {
            let d = DominationConfig::default();
            Plan::Domination(DominationConfig {
                d: r.d,
                n: r.n,
                a: r.a,
                epsilons: x.epsilons.clone().unwrap_or(d.epsilons),
                test_sets: match &x.test_sets {
                    Some(s) => s.iter().filter_map(|t| parse_test_set(t)).collect(),
                    None => d.test_sets,
                },
                burn_in: r.burn_in.or(d.burn_in),
                sweeps: x.sweeps.or(r.budget).unwrap_or(d.sweeps),
                blocks: r.blocks.unwrap_or(d.blocks),
                order: r.order,
                dyn_seed: r.dyn_seed,
                max_rel_error: d.max_rel_error,
                max_spread: x.max_spread.unwrap_or(d.max_spread),
            })
        }
        Command::BoxDoubling => {
            let d = BoxDoublingConfig::default();
            let sizes = match (&x.sizes, r.n_given) {
                (Some(s), _) => s.clone(),
                (None, true) if r.n.is_multiple_of(4) => vec![r.n / 4, r.n / 2, r.n],
                (None, true) => {
                    return Err(RunError::Config(
                        "`model.n` must be divisible by 4 for box-doubling, or set `experiment.sizes`".into(),
                    ))
                }
                (None, false) => d.sizes,
            };
            Plan::BoxDoubling(BoxDoublingConfig {
                d: r.d,
                sizes,
                law: r.law,
                params: params(r),
                replicates: x.replicates.unwrap_or(d.replicates),
                env_seed: r.env_seed,
                dyn_seed: r.dyn_seed,
                thermo: thermo(r, default_thermo_template()),
            })
        }
        Command::Tail => {
            let d = TailConfig::default();
            Plan::Tail(TailConfig {
                sizes: sizes(r, d.sizes),
                law: r.law,
                params: params(r),
                env_seed: r.env_seed,
                thresholds: x.thresholds.clone().unwrap_or(d.thresholds),
                c3: x.c3.unwrap_or(d.c3),
                burn_in: r.burn_in.or(d.burn_in),
                sweeps: x.sweeps.or(r.budget).unwrap_or(d.sweeps),
                blocks: r.blocks.unwrap_or(d.blocks),
                order: r.order,
                dyn_seed: r.dyn_seed,
                min_count: x.min_count.unwrap_or(d.min_count),
            })
        }
        Command::VarianceD2 => {
            let d = VarianceConfig::default();
            Plan::Variance(VarianceConfig {
                n: r.n,
                a: r.a,
                epsilons: x.epsilons.clone().unwrap_or(d.epsilons),
                burn_in: r.burn_in.or(d.burn_in),
                sweeps: x.sweeps.or(r.budget).unwrap_or(d.sweeps),
                blocks: r.blocks.unwrap_or(d.blocks),
                order: r.order,
                dyn_seed: r.dyn_seed,
                max_separation: x.max_separation.unwrap_or(d.max_separation),
                min_mass_times_n: x.min_mass_times_n.unwrap_or(d.min_mass_times_n),
                enforce_mass_guard: x.enforce_mass_guard.unwrap_or(d.enforce_mass_guard),
                slope_range: d.slope_range,
            })
        }
        Command::Truncation => {
            let d = TruncationConfig::default();
            Plan::Truncation(TruncationConfig {
                d: r.d,
                n: r.n,
                law: r.law,
                params: params(r),
                cutoffs: x.cutoffs.clone().unwrap_or(d.cutoffs),
                replicates: x.replicates.unwrap_or(d.replicates),
                env_seed: r.env_seed,
                dyn_seed: r.dyn_seed,
                thermo: thermo(r, default_thermo_template()),
            })
        }
    })
}

fn report_outcome(report: ScalingReport) -> Outcome {
    let mut summary = vec![format!("verdict: {}", verdict_label(report.verdict))];
    for c in &report.checks {
        summary.push(format!("  {} {}: {}", status_label(c.status), c.name, c.detail));
    }
    for note in &report.notes {
        summary.push(format!("  note: {note}"));
    }
    Outcome {
        rows: report.rows.clone(),
        report: Some(report),
        ..Outcome::default()
    }
    .with_summary(summary)
}

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn status_label(s: CheckStatus) -> &'static str {
    match s {
        CheckStatus::Pass => "pass",
        CheckStatus::Fail => "fail",
        CheckStatus::Guard => "guard",
    }
}

impl Outcome {
    fn with_summary(mut self, s: Vec<String>) -> Self {
        self.summary = s;
        self
    }
}

fn context(r: &Resolved, experiment: &str) -> RowContext {
    RowContext {
        experiment: experiment.to_string(),
        d: r.d,
        n: r.n,
        law: r.law,
        params: params(r),
    }
}

fn series_row(ctx: &RowContext, quantity: &str, seed: u64, s: &ObservableSeries, wall: f64) -> EstimateRow {
    ctx.observable_row(
        quantity,
        "mcmc",
        0,
        seed,
        s.batch.mean,
        s.batch.std_error,
        s.values.len() as u64,
        wall,
    )
}

pub fn execute(r: &Resolved, plan: &Plan) -> Result<Outcome, RunError> {
    let start = Instant::now();
    match plan {
        Plan::Sample => {
            let lattice = Arc::new(Lattice::new(r.d, r.n)?);
            let env = EnvironmentRealization::sample(r.law, params(r), &lattice, r.env_seed)?;
            let model = ModelSpec::new(lattice.clone(), &env, 1.0)?;
            let burn_in = r.burn_in.unwrap_or_else(|| default_burn_in(r.d, r.n));
            let sweeps = r.experiment.sweeps.or(r.budget).unwrap_or(1000);
            let v = lattice.volume() as f64;
            let mut state = FieldState::zeros(lattice.volume(), r.dyn_seed);
            let (mut density, mut energy) = (Vec::new(), Vec::new());
            run_chain(&mut state, &model, r.order, burn_in, sweeps, |s| {
                density.push(s.phi.iter().filter(|p| p.abs() <= r.a).count() as f64 / v);
                energy.push(hamiltonian(s, &lattice) / v);
            });
            let blocks = r.blocks.unwrap_or(32);
            let density = ObservableSeries::from_values(density, blocks);
            let energy = ObservableSeries::from_values(energy, blocks);
            let wall = start.elapsed().as_secs_f64();
            let ctx = context(r, "sample");
            let mut snap = Vec::new();
            state.write_snapshot(&lattice, &mut snap)?;
            let mut env_text = Vec::new();
            env.write_text(&mut env_text)?;
            Ok(Outcome {
                rows: vec![
                    series_row(&ctx, "pinned_density", r.dyn_seed, &density, wall),
                    series_row(&ctx, "energy_per_site", r.dyn_seed, &energy, wall),
                ],
                files: vec![("state.snap".into(), snap), ("environment.txt".into(), env_text)],
                summary: vec![
                    format!("pinned density = {:.6} ± {:.2e}", density.batch.mean, density.batch.std_error),
                    format!("energy per site = {:.6} ± {:.2e}", energy.batch.mean, energy.batch.std_error),
                ],
                ..Outcome::default()
            })
        }
        Plan::FreeEnergy(choice) => {
            let lattice = Arc::new(Lattice::new(r.d, r.n)?);
            let env = EnvironmentRealization::sample(r.law, params(r), &lattice, r.env_seed)?;
            let est = free_energy(&lattice, env.rewards(), r.a, choice)?;
            Ok(estimate_outcome(r, "free-energy", &est, start))
        }
        Plan::Oracle => {
            let lattice = Lattice::new(r.d, r.n)?;
            let env = EnvironmentRealization::sample(r.law, params(r), &lattice, r.env_seed)?;
            let est = RectTable::new(&lattice, r.a)?.free_energy(env.rewards())?;
            Ok(estimate_outcome(r, "oracle", &est, start))
        }
        Plan::Gap(c) => Ok(report_outcome(run_gap_experiment(c)?)),
        Plan::Scaling(c) => Ok(report_outcome(run_annealed_scaling(c)?)),
        Plan::Domination(c) => {
            let full = run_domination_test(c)?;
            let detail = serde_json::to_value(&full).unwrap_or(Value::Null);
            let mut out = report_outcome(full.report);
            if let (Some(lo), Some(hi)) = (full.c_minus, full.c_plus) {
                out.summary.insert(1, format!("  c- = {lo:.4}, c+ = {hi:.4}"));
            }
            out.extra.push(("domination.json".into(), detail));
            Ok(out)
        }
        Plan::BoxDoubling(c) => Ok(report_outcome(run_box_doubling(c)?)),
        Plan::Tail(c) => Ok(report_outcome(run_tail_check(c)?)),
        Plan::Variance(c) => Ok(report_outcome(run_variance_d2(c)?)),
        Plan::Truncation(c) => Ok(report_outcome(run_truncation_check(c)?)),
    }
}

fn estimate_outcome(r: &Resolved, experiment: &str, est: &FreeEnergyEstimate, start: Instant) -> Outcome {
    let row = context(r, experiment).estimate_row("f_quenched", 0, r.env_seed, est, start.elapsed().as_secs_f64());
    let line = if est.method != Method::OracleExpansion {
        format!("f = {:.6} ± {:.2e}", est.value, est.std_error)
    } else {
        format!("f = {:.6}", est.value)
    };
    Outcome {
        rows: vec![row],
        extra: vec![("estimate.json".into(), serde_json::to_value(est).unwrap_or(Value::Null))],
        summary: vec![line],
        ..Outcome::default()
    }
}

/// Content hash of the configuration that determines the numbers.
pub fn config_hash(r: &Resolved, plan: &Plan) -> String {
    let key = json!({
        "command": r.command.name(),
        "d": r.d, "n": r.n, "a": r.a, "b": r.b, "h": r.h,
        "law": r.law.to_string(),
        "env_seed": r.env_seed, "dyn_seed": r.dyn_seed,
        "method": r.method, "budget": r.budget, "burn_in": r.burn_in,
        "plan": plan.to_json(),
    });
    let digest = Sha256::digest(key.to_string().as_bytes());
    digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
}

pub fn create_run_dir(base: &Path, command: Command, hash: &str) -> Result<PathBuf, RunError> {
    fs::create_dir_all(base).map_err(io_err(base))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let stem = format!("{}-{stamp}-{hash}", command.name());
    let mut dir = base.join(&stem);
    let mut k = 1;
    while dir.exists() {
        k += 1;
        dir = base.join(format!("{stem}-{k}"));
    }
    fs::create_dir(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).unwrap_or_default();
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Writes `results.csv`, `points.csv`, `verdict.json` and any extras.
pub fn write_outcome(dir: &Path, out: &Outcome) -> Result<(), RunError> {
    let p = dir.join("results.csv");
    write_results(BufWriter::new(File::create(&p).map_err(io_err(&p))?), &out.rows).map_err(io_err(&p))?;
    if let Some(report) = &out.report {
        let p = dir.join("points.csv");
        write_points(BufWriter::new(File::create(&p).map_err(io_err(&p))?), &report.experiment, &report.points)
            .map_err(io_err(&p))?;
        let mut v = serde_json::to_value(report).unwrap_or(Value::Null);
        if let Value::Object(m) = &mut v {
            m.insert("pass".into(), Value::Bool(report.verdict == Verdict::Pass));
        }
        write_json(&dir.join("verdict.json"), &v)?;
    }
    for (name, value) in &out.extra {
        write_json(&dir.join(name), value)?;
    }
    for (name, bytes) in &out.files {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(io_err(&p))?;
    }
    Ok(())
}

pub struct ManifestInput<'a> {
    pub resolved: &'a Resolved,
    pub plan: &'a Plan,
    pub overrides: &'a [Override],
    pub config_file: Option<&'a Path>,
    pub argv: &'a [String],
    pub hash: &'a str,
}

pub fn manifest(m: &ManifestInput, status: &str, wall_time: f64, error: Option<&RunError>) -> Value {
    let r = m.resolved;
    json!({
        "tool": "gffpin",
        "version": env!("CARGO_PKG_VERSION"),
        "git_rev": env!("GFFPIN_GIT_REV"),
        "created": chrono::Utc::now().to_rfc3339(),
        "command": r.command.name(),
        "argv": m.argv,
        "config_file": m.config_file.map(|p| p.display().to_string()),
        "config_hash": m.hash,
        "resolved": r,
        "experiment_config": m.plan.to_json(),
        "overrides": m.overrides,
        "seeds": {
            "env_seed": r.env_seed,
            "dyn_seed": r.dyn_seed,
            "generated": r.seeds_generated,
        },
        "workers": r.workers,
        "status": status,
        "wall_time": wall_time,
        "error": error.map(|e| json!({ "kind": e.kind(), "message": e.to_string() })),
    })
}
