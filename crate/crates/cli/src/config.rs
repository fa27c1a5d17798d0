//! Experiment configuration: JSON schema with defaults applied on parse,
//! unknown-key rejection with key paths, validation, and the desk-scale
//! benchmark preset.

use crate::data::Transform;
use anyhow::{anyhow, bail, Result};
use serde::{Deserialize, Serialize};
use smc2::models::simulate;
use smc2::{Dataset, Lgssm, Model, ReplayRng, Smc2Config, StochVol, Theta, Variant};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    /// Stochastic-volatility model with conjugate parameter conditionals.
    Sv,
    /// Linear-Gaussian state-space model; the autoregression coefficient is
    /// the inferred parameter.
    Lgssm,
}

/// Fixed scales of the linear-Gaussian model.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LgssmParams {
    pub sigma_x: f64,
    pub sigma_y: f64,
}

impl Default for LgssmParams {
    fn default() -> Self {
        LgssmParams { sigma_x: 1.0, sigma_y: 0.5 }
    }
}

/// Synthetic-data block, used when no data file is given.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateBlock {
    pub t_max: usize,
    /// Generating parameters; `null` picks the model default.
    pub theta: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        SimulateBlock { t_max: 100, theta: None, seed: 42 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelChoice,
    /// Observation CSV; when absent the dataset is simulated from `simulate`.
    pub data: Option<PathBuf>,
    pub transform: Transform,
    pub simulate: SimulateBlock,
    pub lgssm: LgssmParams,
    /// Engine settings; `variant`, `tau`, and `seed` are overridden per run
    /// by the experiment plan.
    pub engine: Smc2Config,
    /// Variants to benchmark; empty means just the engine's variant.
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Extra calibration targets, each swept with the full-Gibbs variant
    /// across all seeds.
    pub tau_sweep: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelChoice::Sv,
            data: None,
            transform: Transform::None,
            simulate: SimulateBlock::default(),
            lgssm: LgssmParams::default(),
            engine: Smc2Config::default(),
            variants: Vec::new(),
            seeds: vec![1, 2, 3, 4, 5],
            tau_sweep: Vec::new(),
        }
    }
}

/// The desk-scale benchmark: synthetic stochastic volatility, all four
/// variants plus a calibration-target sweep, sized for minutes not hours.
pub fn desk_preset() -> ExperimentConfig {
    ExperimentConfig {
        engine: Smc2Config {
            n_theta: 200,
            n_x_init: 100,
            record_timing: true,
            ..Smc2Config::default()
        },
        variants: Variant::ALL.to_vec(),
        tau_sweep: vec![2.1, 1.7, 1.4, 1.1],
        ..ExperimentConfig::default()
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow!("cannot read config {}: {e}", path.display()))?;
    parse_config_str(&text)
}

/// Parses and validates a JSON config. Unknown or ill-typed keys are
/// reported with their key path; malformed JSON with line and column.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            anyhow!("config error: {}", e.inner())
        } else {
            anyhow!("config error at `{path}`: {}", e.inner())
        }
    })?;
    config.validate()?;
    Ok(config)
}

/// A warning (not an error) when the config explicitly sets the calibration
/// target but runs a variant that never consumes it.
pub fn tau_unused_warning(text: &str, config: &ExperimentConfig) -> Option<String> {
    let raw: serde_json::Value = serde_json::from_str(text).ok()?;
    let tau_set = raw.get("engine").and_then(|e| e.get("tau")).is_some();
    let uncalibrated: Vec<&str> = config
        .resolved_variants()
        .iter()
        .filter(|v| !v.uses_calibration())
        .map(|v| v.name())
        .collect();
    (tau_set && !uncalibrated.is_empty()).then(|| {
        format!(
            "config sets `engine.tau`, but {} ignores the calibration target",
            uncalibrated.join(", ")
        )
    })
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.engine.validate().map_err(|e| anyhow!("engine: {e}"))?;
        if self.seeds.is_empty() {
            bail!("`seeds` must not be empty");
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in self.resolved_variants() {
            if !seen.insert(v.name()) {
                bail!("duplicate variant `{}` in `variants`", v.name());
            }
        }
        for &tau in &self.tau_sweep {
            if !(tau > 0.0 && tau.is_finite()) {
                bail!("`tau_sweep` values must be positive and finite, got {tau}");
            }
        }
        if let Some(theta) = &self.simulate.theta {
            let want = self.theta_dim();
            if theta.len() != want {
                bail!(
                    "`simulate.theta` has {} values but the {} model has {} parameters",
                    theta.len(),
                    self.model_name(),
                    want
                );
            }
        }
        if self.data.is_none() && self.simulate.t_max == 0 {
            bail!("`simulate.t_max` must be at least 1");
        }
        if self.data.is_some() && self.simulate.theta.is_some() {
            bail!("`simulate.theta` has no effect when `data` is given; remove one");
        }
        if !(self.lgssm.sigma_x > 0.0 && self.lgssm.sigma_y > 0.0) {
            bail!("`lgssm.sigma_x` and `lgssm.sigma_y` must be positive");
        }
        Ok(())
    }

    pub fn model_name(&self) -> &'static str {
        match self.model {
            ModelChoice::Sv => "sv",
            ModelChoice::Lgssm => "lgssm",
        }
    }

    pub fn theta_dim(&self) -> usize {
        match self.model {
            ModelChoice::Sv => 3,
            ModelChoice::Lgssm => 1,
        }
    }

    pub fn build_model(&self) -> Result<Box<dyn Model>> {
        Ok(match self.model {
            ModelChoice::Sv => Box::new(StochVol::new()),
            ModelChoice::Lgssm => {
                Box::new(Lgssm::new(self.lgssm.sigma_x, self.lgssm.sigma_y)?)
            }
        })
    }

    /// Generating parameters for synthetic data.
    pub fn simulation_theta(&self) -> Vec<f64> {
        self.simulate
            .theta
            .clone()
            .unwrap_or_else(|| default_theta(self.model))
    }

    pub fn resolved_variants(&self) -> Vec<Variant> {
        if self.variants.is_empty() {
            vec![self.engine.variant]
        } else {
            self.variants.clone()
        }
    }

    /// The observations this experiment runs on: ingested or simulated.
    pub fn resolve_dataset(&self) -> Result<Dataset> {
        match &self.data {
            Some(path) => crate::data::ingest_returns(path, self.transform),
            None => {
                let model = self.build_model()?;
                let theta = Theta::new(self.simulation_theta());
                let mut rng = ReplayRng::spawn_stream(self.simulate.seed, 0, 0);
                let (_, data) = simulate(model.as_ref(), &theta, self.simulate.t_max, &mut rng)?;
                Ok(data)
            }
        }
    }
}

pub fn default_theta(model: ModelChoice) -> Vec<f64> {
    match model {
        ModelChoice::Sv => vec![0.0, 0.95, 0.1],
        ModelChoice::Lgssm => vec![0.9],
    }
}
