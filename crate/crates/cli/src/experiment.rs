//! Experiment files.
//!
//! ```toml
//! [defaults]            # any trainer field, applied to every experiment
//! env = "point-mass"
//! total_steps = 10000
//!
//! [[experiment]]
//! variant = "cdq"       # `name` defaults to the variant tag
//! seeds = 5             # seeds seed_start .. seed_start + seeds
//!
//! [[experiment]]
//! name = "tqc-k20"
//! variant = "tqc"
//! top_k = 20
//! seed_start = 100
//! seeds = 5
//! ```
//!
//! Every `(experiment, seed)` pair becomes one run named
//! `{name}-{env}-s{seed}`.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;

use cdqlab::trainer::{AlgoConfig, ConfigIssue};
use serde::Deserialize;
use toml::{Table, Value};

use crate::error::CliError;

/// Keys that shape the run list rather than a single run.
const RUN_KEYS: [&str; 3] = ["name", "seed_start", "seeds"];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    defaults: Table,
    #[serde(default)]
    experiment: Vec<Table>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub name: String,
    /// Resolved trainer configuration; `seed` holds the first seed.
    pub config: AlgoConfig,
    pub seeds: Range<u64>,
}

/// One `(experiment, seed)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub experiment: String,
    pub run_id: String,
    pub config: AlgoConfig,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentFile {
    pub experiments: Vec<Experiment>,
}

fn take_u64(table: &mut Table, key: &str, default: u64, ctx: &str) -> Result<u64, CliError> {
    match table.remove(key) {
        None => Ok(default),
        Some(Value::Integer(v)) if v >= 0 => Ok(v as u64),
        Some(other) => Err(CliError::Config(format!(
            "{ctx}: field `{key}` must be a non-negative integer, got {other}"
        ))),
    }
}

impl ExperimentFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses and resolves an experiment file. Syntax errors carry the
    /// line; field errors name the experiment and field. Value-range
    /// checks are left to [`ExperimentFile::issues`].
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let raw: RawFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))?;
        if raw.defaults.contains_key("seed") {
            return Err(CliError::Config("[defaults]: use `seed_start` and `seeds` per experiment instead of `seed`".into()));
        }
        if let Some(key) = RUN_KEYS.iter().find(|k| raw.defaults.contains_key(**k)) {
            return Err(CliError::Config(format!("[defaults]: `{key}` belongs in an [[experiment]] entry")));
        }
        resolve(raw.defaults.clone(), "[defaults]")?;
        let mut experiments = Vec::with_capacity(raw.experiment.len());
        let mut names = BTreeSet::new();
        for (i, mut table) in raw.experiment.into_iter().enumerate() {
            let ctx = format!("experiment #{}", i + 1);
            if table.contains_key("seed") {
                return Err(CliError::Config(format!("{ctx}: use `seed_start` and `seeds` instead of `seed`")));
            }
            let name = match table.remove("name") {
                None => None,
                Some(Value::String(s)) if !s.is_empty() => Some(s),
                Some(other) => {
                    return Err(CliError::Config(format!("{ctx}: field `name` must be a non-empty string, got {other}")))
                }
            };
            let seed_start = take_u64(&mut table, "seed_start", 0, &ctx)?;
            let n_seeds = take_u64(&mut table, "seeds", 1, &ctx)?;
            let mut merged = raw.defaults.clone();
            merged.extend(table);
            let mut config = resolve(merged, &ctx)?;
            config.seed = seed_start;
            let name = name.unwrap_or_else(|| config.variant.name().to_string());
            if !names.insert(name.clone()) {
                return Err(CliError::Config(format!("{ctx}: duplicate experiment name `{name}`")));
            }
            experiments.push(Experiment {
                name,
                config,
                seeds: seed_start..seed_start + n_seeds,
            });
        }
        Ok(Self { experiments })
    }

    /// Range and consistency problems, labelled by experiment.
    pub fn issues(&self) -> Vec<(String, ConfigIssue)> {
        let mut out = Vec::new();
        for e in &self.experiments {
            if e.seeds.is_empty() {
                out.push((
                    e.name.clone(),
                    ConfigIssue {
                        field: "seeds",
                        message: "must be at least 1".into(),
                    },
                ));
            }
            out.extend(e.config.issues().into_iter().map(|i| (e.name.clone(), i)));
        }
        out
    }

    /// Every run in file order, seeds ascending within an experiment.
    pub fn runs(&self) -> Vec<RunSpec> {
        self.experiments
            .iter()
            .flat_map(|e| {
                e.seeds.clone().map(move |seed| RunSpec {
                    experiment: e.name.clone(),
                    run_id: format!("{}-{}-s{seed}", e.name, e.config.env),
                    config: AlgoConfig {
                        seed,
                        ..e.config.clone()
                    },
                })
            })
            .collect()
    }
}

fn resolve(table: Table, ctx: &str) -> Result<AlgoConfig, CliError> {
    let parse = |t: Table| Value::Table(t).try_into::<AlgoConfig>();
    parse(table.clone()).map_err(|e| {
        // value errors do not say which key they came from; find it
        let culprit = table.iter().find(|(k, v)| {
            let mut one = Table::new();
            one.insert((*k).clone(), (*v).clone());
            parse(one).is_err()
        });
        let msg = e.message().trim_end();
        match culprit {
            Some((k, _)) if !msg.contains(k.as_str()) => CliError::Config(format!("{ctx}: field `{k}`: {msg}")),
            _ => CliError::Config(format!("{ctx}: {msg}")),
        }
    })
}
