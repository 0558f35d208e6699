mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;
use gffpin::experiments::Verdict;
use serde_json::json;

use config::{Command, ConfigError};
use run::{ManifestInput, RunError};

/// Monte Carlo for the lattice free field with disordered square-well pinning.
#[derive(Debug, Parser)]
#[command(name = "gffpin", version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("GFFPIN_GIT_REV"), ")"))]
struct Cli {
    /// Command to run; falls back to `command` in the config file.
    #[arg(value_enum)]
    command: Option<Command>,
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set experiment.sizes=[8,16]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Well half-width.
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    /// Disorder amplitude.
    #[arg(long, allow_hyphen_values = true)]
    b: Option<f64>,
    /// Mean reward.
    #[arg(long, allow_hyphen_values = true)]
    h: Option<f64>,
    /// bernoulli, gaussian, constant or two_point:p:low:high.
    #[arg(long)]
    law: Option<String>,
    /// thermo, importance or oracle.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    burn_in: Option<u64>,
    #[arg(long)]
    sweeps: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    env_seed: Option<u64>,
    #[arg(long)]
    dyn_seed: Option<u64>,
    /// Worker threads; otherwise the config, then GFFPIN_WORKERS, then all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Directory that receives the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Cli {
    fn overrides(&self) -> Result<Vec<(String, String)>, ConfigError> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("model.d", self.d.map(|v| v.to_string()));
        push("model.n", self.n.map(|v| v.to_string()));
        push("model.a", self.a.map(|v| format!("{v:?}")));
        push("model.b", self.b.map(|v| format!("{v:?}")));
        push("model.h", self.h.map(|v| format!("{v:?}")));
        push("model.law", self.law.as_ref().map(|v| format!("{v:?}")));
        push("estimator.method", self.method.as_ref().map(|v| format!("{v:?}")));
        push("estimator.budget", self.budget.map(|v| v.to_string()));
        push("estimator.nodes", self.nodes.map(|v| v.to_string()));
        push("estimator.burn_in", self.burn_in.map(|v| v.to_string()));
        push("experiment.sweeps", self.sweeps.map(|v| v.to_string()));
        push("experiment.replicates", self.replicates.map(|v| v.to_string()));
        push("seeds.env_seed", self.env_seed.map(|v| v.to_string()));
        push("seeds.dyn_seed", self.dyn_seed.map(|v| v.to_string()));
        push("parallelism.workers", self.workers.map(|v| v.to_string()));
        push("output.dir", self.out.as_ref().map(|v| format!("{:?}", v.display().to_string())));
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Invalid {
                key: kv.clone(),
                message: "expected KEY=VALUE".into(),
            })?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

fn fresh_seed() -> u64 {
    let t = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    gffpin::rng::splitmix64(t as u64 ^ u64::from(std::process::id()).rotate_left(32))
}

fn env_workers() -> Result<Option<usize>, ConfigError> {
    match std::env::var("GFFPIN_WORKERS") {
        Ok(v) if !v.trim().is_empty() => v.trim().parse().map(Some).map_err(|_| ConfigError::Invalid {
            key: "GFFPIN_WORKERS".into(),
            message: format!("expected a positive integer, got `{v}`"),
        }),
        _ => Ok(None),
    }
}

fn report_error(err: &RunError, run_dir: Option<&Path>) -> ExitCode {
    let record = json!({
        "status": "error",
        "kind": err.kind(),
        "exit_code": err.exit_code(),
        "message": err.to_string(),
        "run_dir": run_dir.map(|p| p.display().to_string()),
    });
    if let Some(dir) = run_dir {
        let _ = run::write_json(&dir.join("error.json"), &record);
    }
    eprintln!("{record}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let prepared = cli
        .overrides()
        .and_then(|o| config::load(cli.config.as_deref(), &o))
        .and_then(|(cfg, applied)| {
            let resolved = config::resolve(&cfg, cli.command, env_workers()?, fresh_seed)?;
            Ok((resolved, applied))
        });
    let (resolved, overrides) = match prepared {
        Ok(p) => p,
        Err(e) => return report_error(&RunError::Config(e.to_string()), None),
    };
    let plan = match run::plan(&resolved) {
        Ok(p) => p,
        Err(e) => return report_error(&e, None),
    };
    let hash = run::config_hash(&resolved, &plan);
    let dir = match run::create_run_dir(&resolved.out_dir, resolved.command, &hash) {
        Ok(d) => d,
        Err(e) => return report_error(&e, None),
    };
    let input = ManifestInput {
        resolved: &resolved,
        plan: &plan,
        overrides: &overrides,
        config_file: cli.config.as_deref(),
        argv: &argv,
        hash: &hash,
    };
    let manifest_path = dir.join("manifest.json");
    if let Err(e) = run::write_json(&manifest_path, &run::manifest(&input, "running", 0.0, None)) {
        return report_error(&e, Some(&dir));
    }

    let start = Instant::now();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.workers)
        .build()
        .map_err(|e| RunError::Config(format!("`parallelism.workers`: {e}")))
        .and_then(|pool| pool.install(|| run::execute(&resolved, &plan)))
        .and_then(|out| run::write_outcome(&dir, &out).map(|_| out));
    let wall = start.elapsed().as_secs_f64();
    match result {
        Ok(out) => {
            let _ = run::write_json(&manifest_path, &run::manifest(&input, "ok", wall, None));
            for line in &out.summary {
                println!("{line}");
            }
            println!("run directory: {}", dir.display());
            match out.verdict() {
                Some(Verdict::Inconclusive) => ExitCode::from(4),
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            let _ = run::write_json(&manifest_path, &run::manifest(&input, "error", wall, Some(&e)));
            report_error(&e, Some(&dir))
        }
    }
}
