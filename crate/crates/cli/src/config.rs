//! Experiment configuration: JSON file, `KEY=VAL` overrides, `GAPS_SEED`.

use std::path::{Path, PathBuf};

use gaps::envs::{DacOptions, DisturbanceKind, Fig2Options, HorizonOptions, PendulumOptions};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV_VAR: &str = "GAPS_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub env: EnvSpec,
    pub algorithm: AlgorithmSpec,
    /// Number of steps `T`.
    pub horizon: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub metrics: MetricToggles,
    pub contraction: ContractionSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            env: EnvSpec::Fig2 {
                options: Fig2Options::default(),
            },
            algorithm: AlgorithmSpec::default(),
            horizon: 200,
            seed: 0,
            out: None,
            metrics: MetricToggles::default(),
            contraction: ContractionSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Fig2 {
        #[serde(default)]
        options: Fig2Options,
    },
    Pendulum {
        #[serde(default = "default_pendulum_noise")]
        disturbance: DisturbanceKind,
        #[serde(default)]
        options: PendulumOptions,
    },
    Dac {
        #[serde(default)]
        options: DacOptions,
    },
    HorizonSelection {
        #[serde(default = "default_horizons")]
        horizons: Vec<usize>,
        #[serde(default)]
        options: HorizonOptions,
    },
    LinearScalar {
        #[serde(default)]
        options: LinearScalarOptions,
    },
    RandomSmooth {
        #[serde(default)]
        options: RandomSmoothOptions,
    },
}

impl EnvSpec {
    pub fn label(&self) -> &'static str {
        match self {
            EnvSpec::Fig2 { .. } => "fig2",
            EnvSpec::Pendulum { .. } => "pendulum",
            EnvSpec::Dac { .. } => "dac",
            EnvSpec::HorizonSelection { .. } => "horizon_selection",
            EnvSpec::LinearScalar { .. } => "linear_scalar",
            EnvSpec::RandomSmooth { .. } => "random_smooth",
        }
    }
}

fn default_pendulum_noise() -> DisturbanceKind {
    DisturbanceKind::IidGaussian { sigma: 1.0 }
}

fn default_horizons() -> Vec<usize> {
    (1..=8).collect()
}

/// `x_{t+1} = a x + b u + w`, `u = −k x`, `f = q x² + r u²`, `k ∈ [gain_lo, gain_hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearScalarOptions {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
    pub sigma_w: f64,
    pub x0: f64,
    pub gain_lo: f64,
    pub gain_hi: f64,
}

impl Default for LinearScalarOptions {
    fn default() -> Self {
        Self {
            a: 2.0,
            b: 1.0,
            q: 1.0,
            r: 1.0,
            sigma_w: 1.0,
            x0: 0.0,
            gain_lo: 1.2,
            gain_hi: 2.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSmoothOptions {
    pub n: usize,
    pub m: usize,
    pub d: usize,
}

impl Default for RandomSmoothOptions {
    fn default() -> Self {
        Self { n: 3, m: 2, d: 3 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRate {
    /// Use `eta` as given.
    #[default]
    Fixed,
    /// `(1 − ρ̂)^{5/2} / √T`
    Convex,
    /// `(1 − ρ̂)^{3/2} √(1 + V̂) / √T`
    Nonconvex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Gaps {
        #[serde(default = "default_eta")]
        eta: f64,
        #[serde(default)]
        learning_rate: LearningRate,
        /// Defaults to the length derived from `rho_hat`, or 32 without one.
        #[serde(default)]
        buffer_len: Option<usize>,
        /// Defaults to the centre of the parameter set.
        #[serde(default)]
        theta0: Option<Vec<f64>>,
        /// Estimated when a schedule needs it and none is given.
        #[serde(default)]
        rho_hat: Option<f64>,
        #[serde(default)]
        variation: Option<f64>,
    },
    /// Projected gradient descent on the exact surrogate gradient.
    IdealOgd {
        #[serde(default = "default_eta")]
        eta: f64,
        #[serde(default)]
        theta0: Option<Vec<f64>>,
    },
    Baps {
        /// Defaults to the environment's own arms (horizon selection only).
        #[serde(default)]
        arms: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        batch: Option<usize>,
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default = "default_c0")]
        c0: f64,
        #[serde(default)]
        rho: Option<f64>,
        #[serde(default)]
        d0: Option<f64>,
    },
    /// Follow-the-leader on the confidence weight (fig2, one lead).
    Ftl {},
    /// Mass-scheduled LQR gains (pendulum).
    Lqr {},
    Constant {
        #[serde(default)]
        theta: Option<Vec<f64>>,
    },
}

impl Default for AlgorithmSpec {
    fn default() -> Self {
        AlgorithmSpec::Gaps {
            eta: default_eta(),
            learning_rate: LearningRate::Fixed,
            buffer_len: None,
            theta0: None,
            rho_hat: None,
            variation: None,
        }
    }
}

impl AlgorithmSpec {
    pub fn label(&self) -> &'static str {
        match self {
            AlgorithmSpec::Gaps { .. } => "gaps",
            AlgorithmSpec::IdealOgd { .. } => "ideal_ogd",
            AlgorithmSpec::Baps { .. } => "baps",
            AlgorithmSpec::Ftl {} => "ftl",
            AlgorithmSpec::Lqr {} => "lqr",
            AlgorithmSpec::Constant { .. } => "constant",
        }
    }
}

fn default_eta() -> f64 {
    0.05
}

fn default_c0() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricToggles {
    pub static_regret: bool,
    pub adaptive_regret: bool,
    /// `Σ_t ‖∇F_t(θ_t)‖²`
    pub local_regret: bool,
    /// Mean `‖G_t − ∇F_t(θ_t)‖` (gradient-based algorithms only).
    pub grad_bias: bool,
    /// Mean `|f_t − F_t(θ_t)|`.
    pub surrogate_gap: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        Self {
            static_regret: true,
            adaptive_regret: true,
            local_regret: false,
            grad_bias: false,
            surrogate_gap: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractionSettings {
    /// Per-step parameter drift bound of the probe sequences.
    pub eps: f64,
    pub pairs: usize,
    pub horizon: usize,
    /// Defaults to twice the largest state norm seen on probe runs.
    pub probe_radius: Option<f64>,
    pub stability_runs: usize,
}

impl Default for ContractionSettings {
    fn default() -> Self {
        Self {
            eps: 0.01,
            pairs: 100,
            horizon: 200,
            probe_radius: None,
            stability_runs: 20,
        }
    }
}

/// Reads the config file (or starts from defaults), applies `GAPS_SEED`
/// and then each override in order.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let base = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let seed = std::env::var(SEED_ENV_VAR).ok();
    resolve(base, seed.as_deref(), overrides)
}

pub fn from_json(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    check_version(&cfg)?;
    Ok(cfg)
}

/// Overrides address the fully defaulted config, so `algorithm.eta=0` works
/// even when the file omits the `algorithm` block. Switching a tagged variant
/// needs the whole object, e.g. `env={"name":"dac"}`.
pub fn resolve(base: ExperimentConfig, seed: Option<&str>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut cfg = base;
    if let Some(s) = seed {
        cfg.seed = s
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV_VAR}={s:?} is not an unsigned integer")))?;
    }
    if overrides.is_empty() {
        return Ok(cfg);
    }
    let mut value = serde_json::to_value(&cfg).map_err(|e| CliError::Internal(e.to_string()))?;
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    check_version(&cfg)?;
    Ok(cfg)
}

fn check_version(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }
    Ok(())
}

/// `a.b.c=VAL`; `VAL` is parsed as JSON and falls back to a plain string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not KEY=VAL")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key {key:?} has an empty segment")));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for (i, part) in path.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {} is not an object", path[..i].join("."))))?;
        if i + 1 == path.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    unreachable!("path has at least one segment")
}
