//! Configuration files for each subcommand.
//!
//! Files are TOML: `key = value` lines grouped under `[section]` headers.
//! Unknown keys are rejected, and every omitted key takes a default that is
//! echoed back into the provenance block of each output.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use sde_lab::lab::{
    DesignConfig, ExperimentConfig, McmcConfig, OptimizerConfig, PriorConfig, PriorLabel, SourceConfig,
};
use sde_lab::{EffectsCovariance, ModelSpec, ParamSpace, Theta};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Iid,
    Tridiagonal,
    Compound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EffectsConfig {
    pub structure: Structure,
    pub rho: f64,
}

impl Default for EffectsConfig {
    fn default() -> Self {
        Self { structure: Structure::Iid, rho: 1.0 / 3.0 }
    }
}

impl EffectsConfig {
    pub fn covariance(&self) -> EffectsCovariance {
        match self.structure {
            Structure::Iid => EffectsCovariance::Iid,
            Structure::Tridiagonal => EffectsCovariance::Tridiagonal(self.rho),
            Structure::Compound => EffectsCovariance::CompoundSymmetry(self.rho),
        }
    }
}

/// Where the per-subject statistics come from: a stats CSV at `path`, or a
/// fresh simulation described by the remaining keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub model: String,
    pub n: usize,
    pub x0: f64,
    pub theta0: Theta,
    pub design: DesignConfig,
    pub source: SourceConfig,
    pub effects: EffectsConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            model: "unit".into(),
            n: 50,
            x0: 0.0,
            theta0: Theta { mu: 1.0, omega2: 1.0 },
            design: DesignConfig::default(),
            source: SourceConfig::default(),
            effects: EffectsConfig::default(),
        }
    }
}

impl DataConfig {
    fn validate(&self) -> sde_lab::Result<()> {
        let model = ModelSpec::from_label(&self.model)?;
        Theta::new(self.theta0.mu, self.theta0.omega2)?;
        if self.path.is_none() {
            if self.n < 1 {
                return Err(invalid("n", "need at least one subject"));
            }
            if self.source.steps == 0 && !model.is_unit() {
                return Err(invalid("steps", format!("model `{}` needs a positive step count", self.model)));
            }
            if self.design.value.is_nan() || self.design.value <= 0.0 {
                return Err(invalid("value", "design parameter must be positive"));
            }
            if self.effects.structure != Structure::Iid {
                self.effects.covariance().cholesky(self.n)?;
            }
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &self.path {
            if p.is_relative() {
                self.path = Some(base.join(p));
            }
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> sde_lab::Error {
    sde_lab::Error::InvalidArgument { field, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimulateOutput {
    /// Per-subject `(U, V)` table.
    Stats,
    /// The path of the first subject.
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_simulate_output")]
    pub output: SimulateOutput,
    #[serde(default)]
    pub data: DataConfig,
}

fn default_simulate_output() -> SimulateOutput {
    SimulateOutput::Stats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub space: ParamSpace,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorMethod {
    Conjugate,
    Dependent,
    Laplace,
    Mcmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorConfig {
    #[serde(default)]
    pub seed: u64,
    pub method: PosteriorMethod,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub space: ParamSpace,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
}

impl PosteriorConfig {
    pub fn prior(&self) -> sde_lab::Prior {
        self.prior.prior(&self.data.theta0)
    }
}

fn check_level(level: f64) -> sde_lab::Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(invalid("level", format!("must lie in (0, 1), got {level}")))
    }
}

/// A parsed, validated configuration with a settable seed.
pub trait RunConfig: Serialize + DeserializeOwned + std::fmt::Debug {
    fn validate(&self) -> sde_lab::Result<()>;
    fn seed_mut(&mut self) -> &mut u64;
    fn resolve_paths(&mut self, _base: &Path) {}
}

impl RunConfig for ExperimentConfig {
    fn validate(&self) -> sde_lab::Result<()> {
        ExperimentConfig::validate(self)
    }
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

impl RunConfig for SimulateConfig {
    fn validate(&self) -> sde_lab::Result<()> {
        if self.data.path.is_some() {
            return Err(invalid("path", "simulate generates its own data"));
        }
        if self.output == SimulateOutput::Trajectory && self.data.source.steps == 0 {
            return Err(invalid("steps", "trajectory output needs a positive step count"));
        }
        self.data.validate()
    }
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

impl RunConfig for FitConfig {
    fn validate(&self) -> sde_lab::Result<()> {
        check_level(self.level)?;
        self.space.validate()?;
        self.data.validate()
    }
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn resolve_paths(&mut self, base: &Path) {
        self.data.resolve_paths(base);
    }
}

impl RunConfig for PosteriorConfig {
    fn validate(&self) -> sde_lab::Result<()> {
        check_level(self.level)?;
        self.space.validate()?;
        self.data.validate()?;
        self.prior().validate()?;
        let needs_normal_mu = matches!(self.method, PosteriorMethod::Conjugate | PosteriorMethod::Dependent);
        if needs_normal_mu && self.prior.kind != PriorLabel::NormalMu {
            return Err(invalid("prior", "conjugate and dependent posteriors need the normal_mu prior"));
        }
        if self.mcmc.draws < 10 {
            return Err(invalid("draws", format!("need at least 10 draws, got {}", self.mcmc.draws)));
        }
        Ok(())
    }
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn resolve_paths(&mut self, base: &Path) {
        self.data.resolve_paths(base);
    }
}

/// Read, parse and validate a config file, applying a seed override.
pub fn parse_config<C: RunConfig>(path: &Path, seed: Option<u64>) -> Result<C, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config `{}`: {e}", path.display())))?;
    let mut config = parse_config_str::<C>(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        *config.seed_mut() = seed;
    }
    config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    config.validate().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(config)
}

/// Parse without validation or seed handling.
pub fn parse_config_str<C: DeserializeOwned>(text: &str) -> Result<C, String> {
    toml::from_str(text).map_err(|e| e.to_string().trim_end().to_string())
}

/// The config with every default filled in, as TOML.
pub fn resolved_toml<C: Serialize>(config: &C) -> String {
    toml::to_string(config).expect("configs serialize to TOML")
}
