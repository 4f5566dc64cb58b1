//! Domain types for the random-effects SDE
//!
//! ```text
//! dX_i(t) = phi_i * b(X_i(t)) dt + sigma(X_i(t)) dW_i(t),   phi_i ~ N(mu, omega2)
//! ```
//!
//! together with the parameter box, priors over `theta = (mu, omega2)` and the
//! per-subject designs `(x0_i, T_i)`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};

/// Whether the drift base and diffusion are identically one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFamily {
    UnitModel,
    GeneralLinearDrift,
}

/// Drift base `b(x)` and diffusion `sigma(x)` of a linear-drift SDE.
///
/// The random effect enters the drift multiplicatively, `phi * b(x)`.
#[derive(Clone, Copy)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub label: &'static str,
    drift: fn(f64) -> f64,
    diffusion: fn(f64) -> f64,
}

fn one(_: f64) -> f64 {
    1.0
}

fn identity(x: f64) -> f64 {
    x
}

fn neg_identity(x: f64) -> f64 {
    -x
}

/// Labels accepted by [`ModelSpec::from_label`].
pub const MODEL_LABELS: [&str; 3] = ["unit", "linear", "ou"];

impl ModelSpec {
    /// `b = sigma = 1`, so `U = phi T + W(T)` and `V = T`.
    pub fn unit() -> Self {
        Self {
            family: ModelFamily::UnitModel,
            label: "unit",
            drift: one,
            diffusion: one,
        }
    }

    /// `b(x) = x`, `sigma = 1` (geometric growth at rate `phi`).
    pub fn linear() -> Self {
        Self::general("linear", identity, one)
    }

    /// `b(x) = -x`, `sigma = 1` (mean reversion to zero at rate `phi`).
    pub fn ornstein_uhlenbeck() -> Self {
        Self::general("ou", neg_identity, one)
    }

    pub fn general(label: &'static str, drift: fn(f64) -> f64, diffusion: fn(f64) -> f64) -> Self {
        Self {
            family: ModelFamily::GeneralLinearDrift,
            label,
            drift,
            diffusion,
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "unit" => Ok(Self::unit()),
            "linear" => Ok(Self::linear()),
            "ou" => Ok(Self::ornstein_uhlenbeck()),
            other => Err(invalid(
                "model",
                format!("unknown model label `{other}` (expected one of {MODEL_LABELS:?})"),
            )),
        }
    }

    #[inline]
    pub fn b(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        (self.diffusion)(x)
    }

    pub fn is_unit(&self) -> bool {
        self.family == ModelFamily::UnitModel
    }
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("family", &self.family)
            .field("label", &self.label)
            .finish()
    }
}

/// Population parameter: mean and variance of the random-effect law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theta {
    pub mu: f64,
    pub omega2: f64,
}

impl Theta {
    pub fn new(mu: f64, omega2: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(invalid("mu", format!("must be finite, got {mu}")));
        }
        if !(omega2 > 0.0 && omega2.is_finite()) {
            return Err(invalid("omega2", format!("must be positive and finite, got {omega2}")));
        }
        Ok(Self { mu, omega2 })
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.mu, self.omega2]
    }
}

/// Closed axis-aligned box housing the parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamSpace {
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub omega2_lo: f64,
    pub omega2_hi: f64,
}

impl Default for ParamSpace {
    fn default() -> Self {
        Self {
            mu_lo: -10.0,
            mu_hi: 10.0,
            omega2_lo: 1e-3,
            omega2_hi: 1e2,
        }
    }
}

impl ParamSpace {
    pub fn new(mu_lo: f64, mu_hi: f64, omega2_lo: f64, omega2_hi: f64) -> Result<Self> {
        let space = Self {
            mu_lo,
            mu_hi,
            omega2_lo,
            omega2_hi,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_lo.is_finite() && self.mu_hi.is_finite() && self.mu_lo < self.mu_hi) {
            return Err(invalid(
                "mu_lo",
                format!("need finite mu_lo < mu_hi, got [{}, {}]", self.mu_lo, self.mu_hi),
            ));
        }
        if !(self.omega2_lo > 0.0 && self.omega2_hi.is_finite() && self.omega2_lo < self.omega2_hi) {
            return Err(invalid(
                "omega2_lo",
                format!(
                    "need 0 < omega2_lo < omega2_hi < inf, got [{}, {}]",
                    self.omega2_lo, self.omega2_hi
                ),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, theta: &Theta) -> bool {
        validate_theta(theta, self)
    }

    pub fn center(&self) -> Theta {
        Theta {
            mu: 0.5 * (self.mu_lo + self.mu_hi),
            omega2: 0.5 * (self.omega2_lo + self.omega2_hi),
        }
    }

    pub fn clamp(&self, theta: Theta) -> Theta {
        Theta {
            mu: theta.mu.clamp(self.mu_lo, self.mu_hi),
            omega2: theta.omega2.clamp(self.omega2_lo, self.omega2_hi),
        }
    }

    pub fn area(&self) -> f64 {
        (self.mu_hi - self.mu_lo) * (self.omega2_hi - self.omega2_lo)
    }
}

/// Closed-box membership test.
pub fn validate_theta(theta: &Theta, space: &ParamSpace) -> bool {
    (space.mu_lo..=space.mu_hi).contains(&theta.mu)
        && (space.omega2_lo..=space.omega2_hi).contains(&theta.omega2)
}

/// Prior over `theta`.
///
/// `NormalMu` fixes `omega2` at a known value and places `N(mean, var)` on
/// `mu`; the other two variants are genuine two-parameter priors restricted to
/// the parameter box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Prior {
    NormalMu {
        mean: f64,
        var: f64,
        omega2: f64,
    },
    UniformBox,
    TruncatedNormalProduct {
        mu_mean: f64,
        mu_var: f64,
        omega2_mean: f64,
        omega2_var: f64,
    },
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("must be positive and finite, got {v}")))
            }
        };
        match *self {
            Prior::NormalMu { mean, var, omega2 } => {
                if !mean.is_finite() {
                    return Err(invalid("a", "prior mean must be finite"));
                }
                positive("b2", var)?;
                positive("omega2", omega2)
            }
            Prior::UniformBox => Ok(()),
            Prior::TruncatedNormalProduct {
                mu_mean,
                mu_var,
                omega2_mean,
                omega2_var,
            } => {
                if !(mu_mean.is_finite() && omega2_mean.is_finite()) {
                    return Err(invalid("a", "prior means must be finite"));
                }
                positive("b2", mu_var)?;
                positive("omega2_var", omega2_var)
            }
        }
    }

    /// `Some(omega2)` when the prior pins the random-effect variance.
    pub fn fixed_omega2(&self) -> Option<f64> {
        match *self {
            Prior::NormalMu { omega2, .. } => Some(omega2),
            _ => None,
        }
    }
}

fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * (x - mean).powi(2) / var
}

fn truncated_normal_log_pdf(x: f64, mean: f64, var: f64, lo: f64, hi: f64) -> f64 {
    if !(lo..=hi).contains(&x) {
        return f64::NEG_INFINITY;
    }
    let sd = var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let mass = std.cdf((hi - mean) / sd) - std.cdf((lo - mean) / sd);
    normal_log_pdf(x, mean, var) - mass.ln()
}

/// Log prior density, `-inf` off the support.
///
/// `NormalMu` ignores `theta.omega2` and the box.
pub fn prior_log_density(prior: &Prior, theta: &Theta, space: &ParamSpace) -> f64 {
    match *prior {
        Prior::NormalMu { mean, var, .. } => normal_log_pdf(theta.mu, mean, var),
        Prior::UniformBox => {
            if validate_theta(theta, space) {
                -space.area().ln()
            } else {
                f64::NEG_INFINITY
            }
        }
        Prior::TruncatedNormalProduct {
            mu_mean,
            mu_var,
            omega2_mean,
            omega2_var,
        } => {
            truncated_normal_log_pdf(theta.mu, mu_mean, mu_var, space.mu_lo, space.mu_hi)
                + truncated_normal_log_pdf(
                    theta.omega2,
                    omega2_mean,
                    omega2_var,
                    space.omega2_lo,
                    space.omega2_hi,
                )
        }
    }
}

/// Initial values and observation horizons for `n` subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub x0: Vec<f64>,
    pub horizons: Vec<f64>,
}

impl Design {
    pub fn new(x0: Vec<f64>, horizons: Vec<f64>) -> Result<Self> {
        if horizons.is_empty() {
            return Err(invalid("n", "design needs at least one subject"));
        }
        if x0.len() != horizons.len() {
            return Err(invalid(
                "x0",
                format!("{} initial values for {} horizons", x0.len(), horizons.len()),
            ));
        }
        if let Some(t) = horizons.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(invalid("T", format!("horizons must be positive, got {t}")));
        }
        Ok(Self { x0, horizons })
    }

    pub fn len(&self) -> usize {
        self.horizons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.horizons.is_empty()
    }
}

/// How horizons evolve with the subject index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DesignKind {
    /// `T_i = T` for every subject.
    ConstantT(f64),
    /// `T_1 = c0`, `T_i = 1/(i-1)`: `T_i/(1+T_i) = 1/i`, a divergent series.
    HarmonicRatio(f64),
    /// `T_1 = c0`, `T_i = 1/(i^2-1)`: `T_i/(1+T_i) = 1/i^2`, a convergent series.
    SquareRatio(f64),
}

impl DesignKind {
    pub fn horizon(&self, i: usize) -> f64 {
        match *self {
            DesignKind::ConstantT(t) => t,
            DesignKind::HarmonicRatio(c0) if i == 1 => c0,
            DesignKind::HarmonicRatio(_) => 1.0 / (i - 1) as f64,
            DesignKind::SquareRatio(c0) if i == 1 => c0,
            DesignKind::SquareRatio(_) => {
                let i = i as f64;
                1.0 / (i * i - 1.0)
            }
        }
    }

    fn parameter(&self) -> f64 {
        match *self {
            DesignKind::ConstantT(v) | DesignKind::HarmonicRatio(v) | DesignKind::SquareRatio(v) => v,
        }
    }
}

/// Build the first `n` subjects of a design sequence, all starting at `x0`.
pub fn design_sequence(kind: DesignKind, n: usize, x0: f64) -> Result<Design> {
    if n < 1 {
        return Err(invalid("n", "need at least one subject"));
    }
    let p = kind.parameter();
    if !(p > 0.0 && p.is_finite()) {
        let field = match kind {
            DesignKind::ConstantT(_) => "T",
            _ => "c0",
        };
        return Err(invalid(field, format!("must be positive, got {p}")));
    }
    let horizons = (1..=n).map(|i| kind.horizon(i)).collect();
    Design::new(vec![x0; n], horizons)
}
