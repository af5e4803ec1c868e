//! Experiment configuration: one flat JSON document, overridable key by key.

use std::path::Path;

use fpg_core::divergence::GeneratorKind;
use fpg_core::envs::{EnvSpec, DEFAULT_GAMMA};
use fpg_core::fpg::{Mode, TauChoice};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

/// Environment variable that replaces the `seed` key.
pub const SEED_ENV: &str = "FPG_SEED";

/// Every recognised top-level key.
pub const KEYS: &[&str] = &[
    "experiment",
    "env",
    "gamma",
    "generator",
    "lambda",
    "eta",
    "seed",
    "seeds",
    "batch_size",
    "horizon",
    "iterations",
    "mode",
    "tau",
    "log_every",
    "stop_gap",
    "epsilon",
    "grid_lo",
    "grid_hi",
    "grid_step",
    "out_dir",
];

/// A scalar or a list of scalars; lists span a grid axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// A fixed step size or `"auto"` for `1/(2L_f)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Auto,
    Fixed(f64),
}

/// Raw `eta` entry: a number or a word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaValue {
    Number(f64),
    Word(String),
}

/// Number of seeds counted up from `seed`, or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(usize),
    List(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub experiment: String,
    pub env: String,
    pub gamma: f64,
    pub generator: OneOrMany<String>,
    pub lambda: OneOrMany<f64>,
    pub eta: OneOrMany<EtaValue>,
    pub seed: u64,
    pub seeds: Seeds,
    pub batch_size: usize,
    pub horizon: usize,
    pub iterations: usize,
    pub mode: Mode,
    pub tau: Value,
    pub log_every: usize,
    pub stop_gap: Option<f64>,
    /// Target accuracy for the recommended schedule.
    pub epsilon: f64,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_step: f64,
    pub out_dir: String,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            experiment: "default".into(),
            env: "bandit:0,1".into(),
            gamma: DEFAULT_GAMMA,
            generator: OneOrMany::One("kl".into()),
            lambda: OneOrMany::One(1.0),
            eta: OneOrMany::One(EtaValue::Number(1e-3)),
            seed: 0,
            seeds: Seeds::Count(1),
            batch_size: 16,
            horizon: 200,
            iterations: 1000,
            mode: Mode::Stochastic,
            tau: Value::from("auto"),
            log_every: 1,
            stop_gap: None,
            epsilon: 0.1,
            grid_lo: -10.0,
            grid_hi: 10.0,
            grid_step: 0.25,
            out_dir: "out".into(),
        }
    }
}

impl Config {
    /// Reads `path` (or starts from defaults), applies the seed variable and
    /// then each `key=value` override.
    pub fn load(path: Option<&Path>, overrides: &[String], seed_env: Option<&str>) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                match serde_json::from_str(&text)? {
                    Value::Object(m) => m,
                    _ => return Err(CliError::Invalid(format!("{} must hold a JSON object", p.display()))),
                }
            }
            None => Map::new(),
        };
        if let Some(s) = seed_env {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| CliError::Invalid(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
            doc.insert("seed".into(), Value::from(seed));
        }
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| CliError::Invalid(format!("override {o:?} must look like key=value")))?;
            // Bare words such as `nchain:5` are taken as strings.
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::from(raw));
            doc.insert(key.trim().to_string(), value);
        }
        Self::from_map(doc)
    }

    pub fn from_map(doc: Map<String, Value>) -> Result<Self> {
        let unknown: Vec<String> = doc.keys().filter(|k| !KEYS.contains(&k.as_str())).cloned().collect();
        if !unknown.is_empty() {
            return Err(CliError::UnknownKeys(unknown));
        }
        let cfg: Config = serde_json::from_value(Value::Object(doc))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env_spec()?;
        self.generators()?;
        self.step_sizes()?;
        self.tau_choice()?;
        if self.experiment.is_empty() || self.experiment.contains(['/', '\\']) || self.experiment.starts_with('.') {
            return Err(CliError::Invalid(format!(
                "experiment name {:?} is not a plain directory name",
                self.experiment
            )));
        }
        if self.lambda.values().is_empty() || self.lambda.values().iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(CliError::Invalid("lambda values must be finite and ≥ 0".into()));
        }
        if self.seed_list().is_empty() {
            return Err(CliError::Invalid("at least one seed is required".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(CliError::Invalid("epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        Ok(self.env.parse()?)
    }

    pub fn generators(&self) -> Result<Vec<GeneratorKind>> {
        let v = self.generator.values();
        if v.is_empty() {
            return Err(CliError::Invalid("generator list is empty".into()));
        }
        v.iter().map(|s| s.parse().map_err(CliError::from)).collect()
    }

    pub fn step_sizes(&self) -> Result<Vec<StepSize>> {
        let v = self.eta.values();
        if v.is_empty() {
            return Err(CliError::Invalid("eta list is empty".into()));
        }
        v.iter()
            .map(|e| match e {
                EtaValue::Word(s) if s == "auto" => Ok(StepSize::Auto),
                EtaValue::Number(x) if *x >= 0.0 && x.is_finite() => Ok(StepSize::Fixed(*x)),
                EtaValue::Number(x) => Err(CliError::Invalid(format!("eta {x} must be finite and ≥ 0"))),
                EtaValue::Word(w) => Err(CliError::Invalid(format!(
                    "eta must be a number or \"auto\", got {w:?}"
                ))),
            })
            .collect()
    }

    pub fn tau_choice(&self) -> Result<TauChoice> {
        match &self.tau {
            Value::String(s) if s == "auto" => Ok(TauChoice::Auto),
            Value::String(s) if s == "off" => Ok(TauChoice::Off),
            Value::Number(n) => match n.as_f64() {
                Some(t) if t > 0.0 => Ok(TauChoice::Fixed(t)),
                _ => Err(CliError::Invalid(format!("tau {n} must be positive"))),
            },
            other => Err(CliError::Invalid(format!(
                "tau must be \"auto\", \"off\" or a number, got {other}"
            ))),
        }
    }

    /// Seeds actually run. Exact mode is deterministic, so only `seed` is used.
    pub fn seed_list(&self) -> Vec<u64> {
        if self.mode == Mode::Exact {
            return vec![self.seed];
        }
        match &self.seeds {
            Seeds::Count(n) => (0..*n as u64).map(|i| self.seed.wrapping_add(i)).collect(),
            Seeds::List(v) => v.clone(),
        }
    }

    /// The single (generator, λ) pair for commands that do not sweep.
    pub fn single_problem(&self) -> Result<(GeneratorKind, f64)> {
        let gens = self.generators()?;
        let lambdas = self.lambda.values();
        if gens.len() != 1 || lambdas.len() != 1 {
            return Err(CliError::Invalid(
                "this command takes a single generator and a single lambda".into(),
            ));
        }
        Ok((gens[0], lambdas[0]))
    }
}
