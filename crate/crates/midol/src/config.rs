//! Config file ingestion: flat `key=value` text mapped onto `TrainConfig`,
//! with command-line flags taking precedence over file values.

use anyhow::{anyhow, bail, Context, Result};
use midol_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Serializable mirror of `TrainConfig` for manifests and comparison
/// reports; round-trips to an identical config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub ema_lambda0: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_epsilon: f64,
    pub temperature: f64,
    pub seed: u64,
    pub num_experts: usize,
    pub enable_moe: bool,
    pub enable_route: bool,
    pub enable_cst: bool,
}

impl From<&TrainConfig> for ConfigSnapshot {
    fn from(c: &TrainConfig) -> Self {
        ConfigSnapshot {
            steps: c.steps,
            batch: c.batch,
            learning_rate: c.learning_rate,
            weight_decay: c.weight_decay,
            beta1: c.beta1,
            beta2: c.beta2,
            ema_lambda0: c.ema_lambda0,
            sinkhorn_iters: c.sinkhorn_iters,
            sinkhorn_epsilon: c.sinkhorn_epsilon,
            temperature: c.temperature,
            seed: c.seed,
            num_experts: c.num_experts,
            enable_moe: c.enable_moe,
            enable_route: c.enable_route,
            enable_cst: c.enable_cst,
        }
    }
}

impl From<&ConfigSnapshot> for TrainConfig {
    fn from(s: &ConfigSnapshot) -> Self {
        TrainConfig {
            steps: s.steps,
            batch: s.batch,
            learning_rate: s.learning_rate,
            weight_decay: s.weight_decay,
            beta1: s.beta1,
            beta2: s.beta2,
            ema_lambda0: s.ema_lambda0,
            sinkhorn_iters: s.sinkhorn_iters,
            sinkhorn_epsilon: s.sinkhorn_epsilon,
            temperature: s.temperature,
            seed: s.seed,
            num_experts: s.num_experts,
            enable_moe: s.enable_moe,
            enable_route: s.enable_route,
            enable_cst: s.enable_cst,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("config key '{key}': cannot parse value '{value}'"))
}

fn apply_line(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "steps" => config.steps = parse_value(key, value)?,
        "batch" => config.batch = parse_value(key, value)?,
        "learning_rate" => config.learning_rate = parse_value(key, value)?,
        "weight_decay" => config.weight_decay = parse_value(key, value)?,
        "beta1" => config.beta1 = parse_value(key, value)?,
        "beta2" => config.beta2 = parse_value(key, value)?,
        "ema_lambda0" => config.ema_lambda0 = parse_value(key, value)?,
        "sinkhorn_iters" => config.sinkhorn_iters = parse_value(key, value)?,
        "sinkhorn_epsilon" => config.sinkhorn_epsilon = parse_value(key, value)?,
        "temperature" => config.temperature = parse_value(key, value)?,
        "seed" => config.seed = parse_value(key, value)?,
        "num_experts" => config.num_experts = parse_value(key, value)?,
        "enable_moe" => config.enable_moe = parse_value(key, value)?,
        "enable_route" => config.enable_route = parse_value(key, value)?,
        "enable_cst" => config.enable_cst = parse_value(key, value)?,
        _ => bail!("unknown config key '{key}'"),
    }
    Ok(())
}

/// Parses a flat `key=value` config file onto the defaults. Blank lines
/// and `#` comments are allowed; unknown keys are rejected by name.
pub fn parse_config_file(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let mut config = TrainConfig::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            anyhow!(
                "{}:{}: expected key=value, got '{line}'",
                path.display(),
                lineno + 1
            )
        })?;
        apply_line(&mut config, key.trim(), value.trim())?;
    }
    Ok(config)
}

/// Command-line overrides applied on top of the file (or defaults).
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub no_moe: bool,
    pub no_route: bool,
    pub no_cst: bool,
}

/// Full config resolution: defaults, then the file if given, then flags.
pub fn resolve_config(file: Option<&Path>, overrides: &ConfigOverrides) -> Result<TrainConfig> {
    let mut config = match file {
        Some(p) => parse_config_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(steps) = overrides.steps {
        config.steps = steps;
    }
    if overrides.no_moe {
        config.enable_moe = false;
    }
    if overrides.no_route {
        config.enable_route = false;
    }
    if overrides.no_cst {
        config.enable_cst = false;
    }
    Ok(config)
}

/// Renders a config back to the flat file format.
pub fn config_to_text(config: &TrainConfig) -> String {
    format!(
        "steps={}\nbatch={}\nlearning_rate={}\nweight_decay={}\nbeta1={}\nbeta2={}\n\
         ema_lambda0={}\nsinkhorn_iters={}\nsinkhorn_epsilon={}\ntemperature={}\nseed={}\n\
         num_experts={}\nenable_moe={}\nenable_route={}\nenable_cst={}\n",
        config.steps,
        config.batch,
        config.learning_rate,
        config.weight_decay,
        config.beta1,
        config.beta2,
        config.ema_lambda0,
        config.sinkhorn_iters,
        config.sinkhorn_epsilon,
        config.temperature,
        config.seed,
        config.num_experts,
        config.enable_moe,
        config.enable_route,
        config.enable_cst,
    )
}
