use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::likelihood::MleOptions;
use crate::model::{DesignKind, ModelSpec, ParamSpace, Prior, Theta};
use crate::sim::{EffectsCovariance, StatSource};

/// FNV-1a hash of the `Debug` rendering of `value`.
///
/// `Debug` output of `f64` round-trips, so equal text means equal values.
pub fn fingerprint<T: std::fmt::Debug + ?Sized>(value: &T) -> u64 {
    format!("{value:?}")
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Consistency,
    Normality,
    Dependence,
    Intervals,
    Discretization,
    Lrt,
}

impl ExperimentKind {
    pub fn label(&self) -> &'static str {
        match self {
            ExperimentKind::Consistency => "consistency",
            ExperimentKind::Normality => "normality",
            ExperimentKind::Dependence => "dependence",
            ExperimentKind::Intervals => "intervals",
            ExperimentKind::Discretization => "discretization",
            ExperimentKind::Lrt => "lrt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignLabel {
    Constant,
    Harmonic,
    Square,
}

/// Horizon sequence: `constant` uses `value` as `T`, the other two use it as `c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub kind: DesignLabel,
    pub value: f64,
}

impl DesignConfig {
    pub fn kind(&self) -> DesignKind {
        match self.kind {
            DesignLabel::Constant => DesignKind::ConstantT(self.value),
            DesignLabel::Harmonic => DesignKind::HarmonicRatio(self.value),
            DesignLabel::Square => DesignKind::SquareRatio(self.value),
        }
    }
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self { kind: DesignLabel::Constant, value: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorLabel {
    /// `N(a, b2)` on `mu` with `omega2` known.
    NormalMu,
    UniformBox,
    TruncatedNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub kind: PriorLabel,
    pub a: f64,
    pub b2: f64,
    /// Known `omega2` for `normal_mu`; defaults to `theta0.omega2`.
    pub omega2: Option<f64>,
    pub omega2_mean: f64,
    pub omega2_var: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            kind: PriorLabel::NormalMu,
            a: 0.0,
            b2: 2.25,
            omega2: None,
            omega2_mean: 1.0,
            omega2_var: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn prior(&self, theta0: &Theta) -> Prior {
        match self.kind {
            PriorLabel::NormalMu => Prior::NormalMu {
                mean: self.a,
                var: self.b2,
                omega2: self.omega2.unwrap_or(theta0.omega2),
            },
            PriorLabel::UniformBox => Prior::UniformBox,
            PriorLabel::TruncatedNormal => Prior::TruncatedNormalProduct {
                mu_mean: self.a,
                mu_var: self.b2,
                omega2_mean: self.omega2_mean,
                omega2_var: self.omega2_var,
            },
        }
    }
}

/// `steps = 0` selects closed-form statistics (unit model only).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub steps: usize,
}

impl SourceConfig {
    pub fn source(&self) -> StatSource {
        match self.steps {
            0 => StatSource::Exact,
            steps => StatSource::Path { steps },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    /// Retained draws per chain.
    pub draws: usize,
    /// Discarded iterations; defaults to a quarter of `draws`.
    pub burn_in: Option<usize>,
    /// Proposal scales for `mu` and `log omega2`; tuned from the data when absent.
    pub step_scale: Option<[f64; 2]>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { draws: 10_000, burn_in: None, step_scale: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub starts: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = MleOptions::default();
        Self { starts: d.starts, max_iter: d.max_iter, grad_tol: d.grad_tol }
    }
}

impl OptimizerConfig {
    pub fn options(&self) -> MleOptions {
        MleOptions { starts: self.starts, max_iter: self.max_iter, grad_tol: self.grad_tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizationConfig {
    pub m_grid: Vec<usize>,
    /// Steps of the shared fine path all coarser grids are read from.
    pub m_reference: usize,
    pub bins: usize,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self { m_grid: vec![100, 1_000, 10_000], m_reference: 1_000_000, bins: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DependenceConfig {
    pub rho: f64,
    /// Points per emitted density curve.
    pub curve_points: usize,
}

impl Default for DependenceConfig {
    fn default() -> Self {
        Self { rho: 1.0 / 3.0, curve_points: 201 }
    }
}

impl DependenceConfig {
    pub fn structures(&self) -> [EffectsCovariance; 2] {
        [EffectsCovariance::Tridiagonal(self.rho), EffectsCovariance::CompoundSymmetry(self.rho)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalityConfig {
    /// Draw from the fitted normal instead of running the chain.
    pub exact_draws: bool,
    pub grid_bins: usize,
    pub grid_half_width: f64,
}

impl Default for NormalityConfig {
    fn default() -> Self {
        Self { exact_draws: false, grid_bins: 50, grid_half_width: 3.0 }
    }
}

/// One declarative experiment. Every field has a default except `experiment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_sample_sizes")]
    pub sample_sizes: Vec<usize>,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "default_theta0")]
    pub theta0: Theta,
    /// Ball radius for the consistency runner.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub space: ParamSpace,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub dependence: DependenceConfig,
    #[serde(default)]
    pub normality: NormalityConfig,
}

fn default_model() -> String {
    "unit".into()
}

fn default_replicates() -> usize {
    1
}

fn default_sample_sizes() -> Vec<usize> {
    vec![10, 100, 1000]
}

fn default_theta0() -> Theta {
    Theta { mu: 1.0, omega2: 1.0 }
}

fn default_delta() -> f64 {
    0.5
}

fn default_level() -> f64 {
    0.95
}

impl ExperimentConfig {
    /// Defaults for every optional field.
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            model: default_model(),
            seed: 0,
            replicates: default_replicates(),
            sample_sizes: default_sample_sizes(),
            x0: 0.0,
            theta0: default_theta0(),
            delta: default_delta(),
            level: default_level(),
            design: DesignConfig::default(),
            prior: PriorConfig::default(),
            space: ParamSpace::default(),
            source: SourceConfig::default(),
            mcmc: McmcConfig::default(),
            optimizer: OptimizerConfig::default(),
            discretization: DiscretizationConfig::default(),
            dependence: DependenceConfig::default(),
            normality: NormalityConfig::default(),
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        ModelSpec::from_label(&self.model)
    }

    pub fn prior(&self) -> Prior {
        self.prior.prior(&self.theta0)
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model_spec()?;
        Theta::new(self.theta0.mu, self.theta0.omega2)?;
        self.space.validate()?;
        self.prior().validate()?;
        if self.replicates < 1 {
            return Err(invalid("replicates", "need at least one replicate"));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes[0] < 1 {
            return Err(invalid("sample_sizes", "need at least one positive sample size"));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("sample_sizes", format!("must be strictly increasing, got {:?}", self.sample_sizes)));
        }
        if !self.x0.is_finite() {
            return Err(invalid("x0", "must be finite"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(invalid("delta", format!("must be positive, got {}", self.delta)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(invalid("level", format!("must lie in (0, 1), got {}", self.level)));
        }
        if !(self.design.value > 0.0 && self.design.value.is_finite()) {
            let field = if self.design.kind == DesignLabel::Constant { "T" } else { "c0" };
            return Err(invalid(field, format!("must be positive, got {}", self.design.value)));
        }
        if self.source.steps == 0 && !model.is_unit() {
            return Err(invalid("steps", format!("model `{}` needs a positive step count", self.model)));
        }
        if self.mcmc.draws < 10 {
            return Err(invalid("draws", format!("need at least 10 draws, got {}", self.mcmc.draws)));
        }
        if let Some(scale) = self.mcmc.step_scale {
            if scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(invalid("step_scale", format!("must be positive, got {scale:?}")));
            }
        }
        if self.optimizer.starts < 1 || self.optimizer.max_iter < 1 || !(self.optimizer.grad_tol > 0.0) {
            return Err(invalid("optimizer", "starts, max_iter and grad_tol must be positive"));
        }
        match self.experiment {
            ExperimentKind::Discretization => {
                let d = &self.discretization;
                if d.m_grid.is_empty() || d.m_grid.windows(2).any(|w| w[0] >= w[1]) || d.m_grid[0] < 1 {
                    return Err(invalid("m_grid", format!("must be positive and strictly increasing, got {:?}", d.m_grid)));
                }
                if let Some(m) = d.m_grid.iter().find(|&&m| !d.m_reference.is_multiple_of(m)) {
                    return Err(invalid("m_reference", format!("{} is not a multiple of m = {m}", d.m_reference)));
                }
                if d.bins < 1 {
                    return Err(invalid("bins", "need at least one bin"));
                }
                if self.sample_sizes.len() != 1 {
                    return Err(invalid("sample_sizes", "discretization runs use a single sample size"));
                }
            }
            ExperimentKind::Dependence => {
                for cov in self.dependence.structures() {
                    cov.cholesky(*self.sample_sizes.last().expect("non-empty"))?;
                }
                if self.dependence.curve_points < 2 {
                    return Err(invalid("curve_points", "need at least two points"));
                }
                self.require_normal_mu()?;
            }
            ExperimentKind::Intervals => self.require_normal_mu()?,
            ExperimentKind::Normality => {
                if self.prior().fixed_omega2().is_some() {
                    return Err(invalid("prior", "normality runs need a two-parameter prior"));
                }
                if self.normality.grid_bins < 1 || !(self.normality.grid_half_width > 0.0) {
                    return Err(invalid("grid_bins", "grid must be non-empty"));
                }
            }
            ExperimentKind::Consistency | ExperimentKind::Lrt => {}
        }
        Ok(())
    }

    fn require_normal_mu(&self) -> Result<()> {
        match self.prior.kind {
            PriorLabel::NormalMu => Ok(()),
            _ => Err(invalid("prior", format!("{} runs need the normal_mu prior", self.experiment.label()))),
        }
    }

    /// Stable 64-bit fingerprint of every field.
    pub fn fingerprint(&self) -> u64 {
        fingerprint(self)
    }

    pub fn fingerprint_hex(&self) -> String {
        format!("{:016x}", self.fingerprint())
    }
}
