//! Run configuration: a TOML file with `[model]`, `[estimator]`,
//! `[parallelism]`, `[seeds]`, `[output]` and `[experiment]` sections, or the
//! same keys written flat at the top level. Command-line flags are applied on
//! top and recorded as overrides.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use gffpin::environment::DisorderLaw;
use gffpin::experiments::TestSet;
use gffpin::sampler::SweepOrder;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid TOML: {0}")]
    Parse(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("no command given; pass one on the command line or set `command`")]
    MissingCommand,
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Sample,
    FreeEnergy,
    Gap,
    Scaling,
    Domination,
    BoxDoubling,
    Tail,
    VarianceD2,
    Truncation,
    Oracle,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::FreeEnergy => "free-energy",
            Command::Gap => "gap",
            Command::Scaling => "scaling",
            Command::Domination => "domination",
            Command::BoxDoubling => "box-doubling",
            Command::Tail => "tail",
            Command::VarianceD2 => "variance-d2",
            Command::Truncation => "truncation",
            Command::Oracle => "oracle",
        }
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("model", &["d", "n", "a", "b", "h", "law"]),
    ("estimator", &["method", "budget", "nodes", "burn_in", "blocks", "order"]),
    ("parallelism", &["workers"]),
    ("seeds", &["env_seed", "dyn_seed"]),
    ("output", &["dir"]),
    (
        "experiment",
        &[
            "sizes",
            "replicates",
            "ells",
            "epsilons",
            "cutoffs",
            "thresholds",
            "test_sets",
            "c1",
            "c3",
            "sweeps",
            "max_separation",
            "min_mass_times_n",
            "enforce_mass_guard",
            "min_count",
            "min_r_squared",
            "max_spread",
        ],
    ),
];

// keys whose values are real numbers even when written as integers
const FLOAT_KEYS: &[&str] = &[
    "a",
    "b",
    "h",
    "c1",
    "c3",
    "min_mass_times_n",
    "min_r_squared",
    "max_spread",
    "ells",
    "epsilons",
    "cutoffs",
    "thresholds",
];

fn section_of(key: &str) -> Option<&'static str> {
    SECTIONS
        .iter()
        .find(|(_, keys)| keys.contains(&key))
        .map(|(s, _)| *s)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub h: Option<f64>,
    pub law: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorBlock {
    pub method: Option<String>,
    /// Sweeps per quadrature node, or samples for importance sampling.
    pub budget: Option<u64>,
    pub nodes: Option<usize>,
    pub burn_in: Option<u64>,
    pub blocks: Option<usize>,
    pub order: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelismBlock {
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsBlock {
    pub env_seed: Option<u64>,
    pub dyn_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub sizes: Option<Vec<usize>>,
    pub replicates: Option<usize>,
    pub ells: Option<Vec<f64>>,
    pub epsilons: Option<Vec<f64>>,
    pub cutoffs: Option<Vec<f64>>,
    pub thresholds: Option<Vec<f64>>,
    pub test_sets: Option<Vec<String>>,
    pub c1: Option<f64>,
    pub c3: Option<f64>,
    pub sweeps: Option<u64>,
    pub max_separation: Option<usize>,
    pub min_mass_times_n: Option<f64>,
    pub enforce_mass_guard: Option<bool>,
    pub min_count: Option<usize>,
    pub min_r_squared: Option<f64>,
    pub max_spread: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub estimator: EstimatorBlock,
    #[serde(default)]
    pub parallelism: ParallelismBlock,
    #[serde(default)]
    pub seeds: SeedsBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub experiment: ExperimentBlock,
}

/// A flag that replaced (or supplied) a configuration value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Override {
    pub key: String,
    pub value: String,
    pub previous: Option<String>,
}

/// Parses `value` as a TOML value, falling back to a bare string.
pub fn parse_value(value: &str) -> Value {
    match format!("v = {value}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(value.into())),
        Err(_) => Value::String(value.to_string()),
    }
}

/// Moves flat top-level keys into their sections and rejects anything unknown.
fn normalize(mut table: Table) -> Result<Table, ConfigError> {
    let mut out = Table::new();
    if let Some(c) = table.remove("command") {
        out.insert("command".into(), c);
    }
    for (key, value) in table {
        if let Some(keys) = SECTIONS.iter().find(|(s, _)| *s == key).map(|(_, k)| *k) {
            let Value::Table(inner) = value else {
                return Err(invalid(&key, "expected a section"));
            };
            let section = out
                .entry(key.clone())
                .or_insert_with(|| Value::Table(Table::new()));
            for (k, v) in inner {
                if !keys.contains(&k.as_str()) {
                    return Err(ConfigError::UnknownKey(format!("{key}.{k}")));
                }
                if let Value::Table(s) = section {
                    s.insert(k, v);
                }
            }
        } else if let Some(section) = section_of(&key) {
            if let Value::Table(s) = out
                .entry(section.to_string())
                .or_insert_with(|| Value::Table(Table::new()))
            {
                s.insert(key, value);
            }
        } else {
            return Err(ConfigError::UnknownKey(key));
        }
    }
    for (section, value) in out.iter_mut() {
        if let Value::Table(s) = value {
            for (k, v) in s.iter_mut() {
                if FLOAT_KEYS.contains(&k.as_str()) {
                    coerce_float(v, &format!("{section}.{k}"))?;
                }
            }
        }
    }
    Ok(out)
}

fn coerce_float(v: &mut Value, key: &str) -> Result<(), ConfigError> {
    match v {
        Value::Integer(i) => *v = Value::Float(*i as f64),
        Value::Float(_) => {}
        Value::Array(items) => {
            for item in items {
                coerce_float(item, key)?;
            }
        }
        _ => return Err(invalid(key, "expected a number")),
    }
    Ok(())
}

/// Reads the optional file, applies `overrides` (`key=value` with `key`
/// either `section.key` or a flat key) and type-checks the result.
pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<(RunConfig, Vec<Override>), ConfigError> {
    let raw = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?;
            text.parse::<Table>().map_err(|e| ConfigError::Parse(e.to_string()))?
        }
        None => Table::new(),
    };
    let mut table = normalize(raw)?;
    let mut applied = Vec::new();
    for (key, value) in overrides {
        let (section, leaf) = match key.split_once('.') {
            Some((s, k)) => (s.to_string(), k.to_string()),
            None if key == "command" => (String::new(), key.clone()),
            None => (
                section_of(key)
                    .ok_or_else(|| ConfigError::UnknownKey(key.clone()))?
                    .to_string(),
                key.clone(),
            ),
        };
        let mut parsed = parse_value(value);
        let path = if section.is_empty() {
            leaf.clone()
        } else {
            let known = SECTIONS
                .iter()
                .find(|(s, _)| *s == section)
                .map(|(_, k)| k.contains(&leaf.as_str()))
                .unwrap_or(false);
            if !known {
                return Err(ConfigError::UnknownKey(format!("{section}.{leaf}")));
            }
            if FLOAT_KEYS.contains(&leaf.as_str()) {
                coerce_float(&mut parsed, &format!("{section}.{leaf}"))?;
            }
            format!("{section}.{leaf}")
        };
        let slot = if section.is_empty() {
            &mut table
        } else {
            match table
                .entry(section.clone())
                .or_insert_with(|| Value::Table(Table::new()))
            {
                Value::Table(t) => t,
                _ => unreachable!("sections are tables after normalize"),
            }
        };
        let previous = slot.insert(leaf, parsed.clone()).map(|v| v.to_string());
        applied.push(Override {
            key: path,
            value: parsed.to_string(),
            previous,
        });
    }
    let cfg: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
    Ok((cfg, applied))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Thermo,
    Importance,
    Oracle,
}

/// Model and run settings after defaults and validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub command: Command,
    pub d: usize,
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub h: f64,
    pub law: DisorderLaw,
    pub method: MethodName,
    pub budget: Option<u64>,
    pub nodes: Option<usize>,
    pub burn_in: Option<u64>,
    pub blocks: Option<usize>,
    pub order: SweepOrder,
    pub workers: usize,
    pub env_seed: u64,
    pub dyn_seed: u64,
    pub seeds_generated: bool,
    pub out_dir: PathBuf,
    pub experiment: ExperimentBlock,
    /// Whether `model.n` was given explicitly.
    pub n_given: bool,
}

/// Model values used when the configuration leaves them out; they match the
/// library defaults of each experiment.
struct ModelDefaults {
    d: usize,
    n: usize,
    b: f64,
    h: f64,
    law: DisorderLaw,
}

impl ModelDefaults {
    fn for_command(command: Command) -> Self {
        let base = Self {
            d: 2,
            n: 16,
            b: 1.0,
            h: 0.0,
            law: DisorderLaw::BernoulliPm1,
        };
        match command {
            Command::Oracle => Self { n: 2, ..base },
            Command::Gap => Self { h: 0.2, ..base },
            Command::Scaling | Command::Domination => Self { d: 3, n: 12, b: 0.0, ..base },
            Command::Tail => Self {
                b: 0.0,
                h: 0.1f64.ln_1p(),
                law: DisorderLaw::Constant,
                ..base
            },
            Command::VarianceD2 => Self { n: 64, b: 0.0, ..base },
            Command::Truncation => Self {
                n: 8,
                law: DisorderLaw::StandardGaussian,
                ..base
            },
            Command::Sample | Command::FreeEnergy | Command::BoxDoubling => base,
        }
    }
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(key, format!("must be > 0, got {v}")))
    }
}

fn at_least_one<T: Copy + PartialOrd + From<u8> + std::fmt::Display>(key: &str, v: T) -> Result<T, ConfigError> {
    if v >= T::from(1) {
        Ok(v)
    } else {
        Err(invalid(key, format!("must be >= 1, got {v}")))
    }
}

pub fn parse_test_set(s: &str) -> Option<TestSet> {
    match s {
        "singleton" => Some(TestSet::Singleton),
        "adjacent_pair" => Some(TestSet::AdjacentPair),
        "far_pair" => Some(TestSet::FarPair),
        _ => s
            .strip_prefix("block")
            .and_then(|k| k.parse().ok())
            .map(|side| TestSet::Block { side }),
    }
}

/// Fills defaults and validates every numeric field. `env_workers` is the
/// worker count from the environment, used when the config sets none.
pub fn resolve(
    cfg: &RunConfig,
    cli_command: Option<Command>,
    env_workers: Option<usize>,
    fresh_seed: impl Fn() -> u64,
) -> Result<Resolved, ConfigError> {
    let command = cli_command.or(cfg.command).ok_or(ConfigError::MissingCommand)?;
    let m = &cfg.model;
    let base = ModelDefaults::for_command(command);
    let d = at_least_one("model.d", m.d.unwrap_or(base.d))?;
    let n = at_least_one("model.n", m.n.unwrap_or(base.n))?;
    let a = positive("model.a", m.a.unwrap_or(1.0))?;
    let b = m.b.unwrap_or(base.b);
    if !(b >= 0.0 && b.is_finite()) {
        return Err(invalid("model.b", format!("must be finite and >= 0, got {b}")));
    }
    let h = m.h.unwrap_or(base.h);
    if !h.is_finite() {
        return Err(invalid("model.h", "must be finite"));
    }
    let law: DisorderLaw = match &m.law {
        Some(s) => s.parse().map_err(|e| invalid("model.law", format!("{e}")))?,
        None => base.law,
    };
    law.validate().map_err(|e| invalid("model.law", e.to_string()))?;

    let e = &cfg.estimator;
    let method = match e.method.as_deref() {
        None | Some("thermo") | Some("thermo_integration") => MethodName::Thermo,
        Some("importance") => MethodName::Importance,
        Some("oracle") | Some("oracle_expansion") => MethodName::Oracle,
        Some(other) => {
            return Err(invalid(
                "estimator.method",
                format!("unknown method `{other}` (thermo, importance, oracle)"),
            ))
        }
    };
    if let Some(budget) = e.budget {
        at_least_one("estimator.budget", budget)?;
    }
    if let Some(nodes) = e.nodes {
        at_least_one("estimator.nodes", nodes)?;
    }
    if let Some(blocks) = e.blocks {
        if blocks < 8 {
            return Err(invalid("estimator.blocks", format!("must be >= 8, got {blocks}")));
        }
    }
    let order = match e.order.as_deref() {
        None | Some("checkerboard") => SweepOrder::Checkerboard,
        Some("sequential") => SweepOrder::Sequential,
        Some(other) => {
            return Err(invalid(
                "estimator.order",
                format!("unknown order `{other}` (checkerboard, sequential)"),
            ))
        }
    };
    let workers = match cfg.parallelism.workers.or(env_workers) {
        Some(w) => at_least_one("parallelism.workers", w)?,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let seeds_generated = cfg.seeds.env_seed.is_none() || cfg.seeds.dyn_seed.is_none();
    let env_seed = cfg.seeds.env_seed.unwrap_or_else(&fresh_seed);
    let dyn_seed = cfg.seeds.dyn_seed.unwrap_or_else(|| fresh_seed().rotate_left(17));

    let x = &cfg.experiment;
    if let Some(sizes) = &x.sizes {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(invalid("experiment.sizes", "must be a nonempty list of positive sides"));
        }
    }
    if let Some(r) = x.replicates {
        if r < 2 {
            return Err(invalid("experiment.replicates", format!("must be >= 2, got {r}")));
        }
    }
    if let Some(s) = x.sweeps {
        at_least_one("experiment.sweeps", s)?;
    }
    if let Some(sets) = &x.test_sets {
        for s in sets {
            if parse_test_set(s).is_none() {
                return Err(invalid(
                    "experiment.test_sets",
                    format!("unknown test set `{s}` (singleton, adjacent_pair, far_pair, block<k>)"),
                ));
            }
        }
    }
    if let Some(c1) = x.c1 {
        positive("experiment.c1", c1)?;
    }
    if command == Command::VarianceD2 && d != 2 {
        return Err(invalid("model.d", format!("variance-d2 runs in d = 2, got {d}")));
    }
    if command == Command::Oracle && n.checked_pow(d as u32).is_none_or(|v| v > gffpin::oracle::EXPANSION_MAX_VOLUME) {
        return Err(invalid(
            "model.n",
            format!("the expansion oracle needs at most {} sites", gffpin::oracle::EXPANSION_MAX_VOLUME),
        ));
    }
    Ok(Resolved {
        command,
        d,
        n,
        a,
        b,
        h,
        law,
        method,
        budget: e.budget,
        nodes: e.nodes,
        burn_in: e.burn_in,
        blocks: e.blocks,
        order,
        workers,
        env_seed,
        dyn_seed,
        seeds_generated,
        out_dir: cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("runs")),
        experiment: x.clone(),
        n_given: m.n.is_some(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_str(text: &str) -> Result<(RunConfig, Vec<Override>), ConfigError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, text).unwrap();
        load(Some(&p), &[])
    }

    #[test]
    fn flat_minimal_config_is_valid() {
        let (cfg, _) =
            from_str("command = \"oracle\"\nd = 2\nn = 2\na = 1\nlaw = \"bernoulli\"\nb = 1\nh = 0\nenv_seed = 7\n").unwrap();
        let r = resolve(&cfg, None, None, || 0).unwrap();
        assert_eq!(r.command, Command::Oracle);
        assert_eq!((r.d, r.n, r.a, r.b, r.h), (2, 2, 1.0, 1.0, 0.0));
        assert_eq!(r.env_seed, 7);
        assert!(r.seeds_generated);
    }

    #[test]
    fn sectioned_config_is_valid() {
        let (cfg, _) = from_str("command = \"gap\"\n[model]\nd = 2\nn = 8\n[experiment]\nsizes = [4, 8]\nreplicates = 3\n").unwrap();
        let r = resolve(&cfg, None, None, || 0).unwrap();
        assert_eq!(r.experiment.sizes, Some(vec![4, 8]));
    }

    #[test]
    fn zero_width_is_rejected_by_name() {
        let (cfg, _) = from_str("a = 0\n").unwrap();
        let err = resolve(&cfg, Some(Command::Oracle), None, || 0).unwrap_err();
        assert!(err.to_string().contains("model.a"), "{err}");
    }

    #[test]
    fn unknown_keys_carry_their_path() {
        let err = from_str("[model]\nwidth = 1\n").unwrap_err();
        assert_eq!(err.to_string(), "unknown key `model.width`");
        let err = from_str("colour = 1\n").unwrap_err();
        assert_eq!(err.to_string(), "unknown key `colour`");
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[model]\nn = 8\n").unwrap();
        let (cfg, o) = load(Some(&p), &[("n".into(), "4".into()), ("model.law".into(), "gaussian".into())]).unwrap();
        assert_eq!(cfg.model.n, Some(4));
        assert_eq!(cfg.model.law.as_deref(), Some("gaussian"));
        assert_eq!(o[0].key, "model.n");
        assert_eq!(o[0].previous.as_deref(), Some("8"));
        assert_eq!(o[1].previous, None);
    }

    #[test]
    fn bad_values_are_named() {
        let (cfg, _) = from_str("[estimator]\nmethod = \"magic\"\n").unwrap();
        let err = resolve(&cfg, Some(Command::FreeEnergy), None, || 0).unwrap_err();
        assert!(err.to_string().starts_with("`estimator.method`"));
        let (cfg, _) = from_str("n = 5\n").unwrap();
        let err = resolve(&cfg, Some(Command::Oracle), None, || 0).unwrap_err();
        assert!(err.to_string().contains("model.n"));
        let (cfg, _) = from_str("d = 3\n").unwrap();
        assert!(resolve(&cfg, Some(Command::VarianceD2), None, || 0).is_err());
    }

    #[test]
    fn worker_count_prefers_config_over_environment() {
        let (cfg, _) = from_str("workers = 3\n").unwrap();
        assert_eq!(resolve(&cfg, Some(Command::Gap), Some(8), || 0).unwrap().workers, 3);
        let (cfg, _) = from_str("").unwrap();
        assert_eq!(resolve(&cfg, Some(Command::Gap), Some(8), || 0).unwrap().workers, 8);
    }
}
