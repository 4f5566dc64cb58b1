//! Posterior inference over `theta`.
//!
//! Three routes are provided: exact normal–normal updates for `mu` when
//! `omega2` is known (with independent or correlated random effects), a
//! normal approximation centred at the MLE, and random-walk Metropolis for
//! the full two-parameter posterior. Interval and ball-probability summaries
//! work on either normal laws or draws.

mod conjugate;
mod interval;
mod laplace;
mod mcmc;

pub use conjugate::{conjugate_posterior_mu, dependent_posterior_mu, dependent_posterior_mu_printed, DependentSolver};
pub use interval::{classical_ci, classical_ci_theta, hpd_interval, hpd_normal, hpd_samples, posterior_prob_ball, Interval, IntervalKind, PosteriorRef};
pub use laplace::laplace_approx;
pub use mcmc::{default_step_scale, rw_metropolis, McmcSample, MetropolisConfig};

use nalgebra::{Matrix2, Vector2};
use serde::Serialize;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PosteriorKind {
    ConjugateMu,
    DependentMu,
    Laplace,
}

/// A normal law over `mu` alone or over `(mu, omega2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GaussianLaw {
    Scalar { mean: f64, var: f64 },
    Bivariate { mean: Vector2<f64>, cov: Matrix2<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPosterior {
    pub law: GaussianLaw,
    pub kind: PosteriorKind,
    /// The observed information was degenerate and replaced by the identity.
    pub fallback_used: bool,
}

impl GaussianPosterior {
    pub fn scalar(mean: f64, var: f64, kind: PosteriorKind) -> Self {
        Self {
            law: GaussianLaw::Scalar { mean, var },
            kind,
            fallback_used: false,
        }
    }

    pub fn dim(&self) -> usize {
        match self.law {
            GaussianLaw::Scalar { .. } => 1,
            GaussianLaw::Bivariate { .. } => 2,
        }
    }

    /// Mean and variance of one coordinate (0 = `mu`, 1 = `omega2`).
    pub fn marginal(&self, component: usize) -> Result<(f64, f64)> {
        match (self.law, component) {
            (GaussianLaw::Scalar { mean, var }, 0) => Ok((mean, var)),
            (GaussianLaw::Bivariate { mean, cov }, k @ (0 | 1)) => Ok((mean[k], cov[(k, k)])),
            _ => Err(invalid(
                "component",
                format!("component {component} out of range for a {}-dimensional posterior", self.dim()),
            )),
        }
    }

    /// Mean and variance of `mu`.
    pub fn mu(&self) -> (f64, f64) {
        self.marginal(0).expect("mu is always present")
    }

    /// Combine a normal law on `mu` with an independent `N(a, b2)` prior by
    /// adding precisions. Only defined for scalar laws.
    pub fn with_normal_prior(&self, a: f64, b2: f64) -> Result<Self> {
        match self.law {
            GaussianLaw::Scalar { mean, var } => {
                let precision = 1.0 / var + 1.0 / b2;
                Ok(Self {
                    law: GaussianLaw::Scalar {
                        mean: (mean / var + a / b2) / precision,
                        var: 1.0 / precision,
                    },
                    ..*self
                })
            }
            GaussianLaw::Bivariate { .. } => Err(invalid("prior", "prior adjustment needs a scalar law")),
        }
    }
}
