use serde::Serialize;

use super::{GaussianLaw, GaussianPosterior, McmcSample};
use crate::error::{invalid, Result};
use crate::likelihood::FisherInfo;
use crate::model::Theta;
use crate::stats::{normal_cdf, two_sided_z};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IntervalKind {
    Hpd,
    ClassicalCi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub kind: IntervalKind,
    pub fallback_used: bool,
}

impl Interval {
    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// What an interval or ball probability is computed from.
#[derive(Debug, Clone, Copy)]
pub enum PosteriorRef<'a> {
    Gaussian { post: &'a GaussianPosterior, component: usize },
    Samples { sample: &'a McmcSample, component: usize },
}

/// Normal HPD interval: `mean +- z sd` (shortest for a symmetric unimodal law).
pub fn hpd_normal(mean: f64, var: f64, level: f64) -> Result<Interval> {
    let z = two_sided_z(level)?;
    let half = z * var.sqrt();
    Ok(Interval {
        lo: mean - half,
        hi: mean + half,
        level,
        kind: IntervalKind::Hpd,
        fallback_used: false,
    })
}

/// Shortest window covering `ceil(level * N)` sorted draws.
pub fn hpd_samples(draws: &[f64], level: f64) -> Result<Interval> {
    two_sided_z(level)?;
    if draws.len() < 10 {
        return Err(invalid("draws", format!("need at least 10 draws, got {}", draws.len())));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((level * n as f64).ceil() as usize).clamp(1, n);
    let (lo, hi) = (0..=n - k)
        .map(|i| (sorted[i], sorted[i + k - 1]))
        .min_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))
        .expect("non-empty window set");
    Ok(Interval {
        lo,
        hi,
        level,
        kind: IntervalKind::Hpd,
        fallback_used: false,
    })
}

pub fn hpd_interval(post: PosteriorRef<'_>, level: f64) -> Result<Interval> {
    match post {
        PosteriorRef::Gaussian { post, component } => {
            let (m, v) = post.marginal(component)?;
            Ok(Interval {
                fallback_used: post.fallback_used,
                ..hpd_normal(m, v, level)?
            })
        }
        PosteriorRef::Samples { sample, component } => hpd_samples(&sample.component(component), level),
    }
}

/// Wald interval `estimate +- z sqrt(variance)`.
pub fn classical_ci(estimate: f64, variance: f64, level: f64) -> Result<Interval> {
    let z = two_sided_z(level)?;
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(invalid("variance", format!("must be positive, got {variance}")));
    }
    let half = z * variance.sqrt();
    Ok(Interval {
        lo: estimate - half,
        hi: estimate + half,
        level,
        kind: IntervalKind::ClassicalCi,
        fallback_used: false,
    })
}

/// Wald interval for one coordinate of `theta_hat` from the observed information.
pub fn classical_ci_theta(theta_hat: &Theta, info: &FisherInfo, level: f64, component: usize) -> Result<Interval> {
    if component > 1 {
        return Err(invalid("component", format!("component {component} out of range")));
    }
    let inv = info
        .matrix
        .try_inverse()
        .ok_or_else(|| invalid("info", "observed information is singular"))?;
    let estimate = theta_hat.as_array()[component];
    Ok(Interval {
        fallback_used: info.fallback_used,
        ..classical_ci(estimate, inv[(component, component)], level)?
    })
}

/// Composite Simpson over `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let interior: f64 = (1..n)
        .map(|i| {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            w * f(a + i as f64 * h)
        })
        .sum();
    (f(a) + f(b) + interior) * h / 3.0
}

/// Mass of a bivariate normal inside the disc of radius `delta` around `center`.
///
/// Integrates the conditional normal of the second coordinate along chords,
/// parametrizing the first coordinate as `center + delta sin t` so the chord
/// length is smooth.
fn bivariate_ball_mass(mean: [f64; 2], cov: [[f64; 2]; 2], center: [f64; 2], delta: f64) -> f64 {
    let sx = cov[0][0].sqrt();
    let reach = 12.0 * sx;
    let lo = ((mean[0] - reach - center[0]) / delta).clamp(-1.0, 1.0).asin();
    let hi = ((mean[0] + reach - center[0]) / delta).clamp(-1.0, 1.0).asin();
    if hi <= lo {
        return 0.0;
    }
    let cond_var = (cov[1][1] - cov[0][1] * cov[0][1] / cov[0][0]).max(0.0);
    let cond_sd = cond_var.sqrt();
    let integrand = |t: f64| {
        let x = center[0] + delta * t.sin();
        let half_chord = delta * t.cos();
        let density = (-(x - mean[0]).powi(2) / (2.0 * cov[0][0])).exp() / (sx * (2.0 * std::f64::consts::PI).sqrt());
        let cm = mean[1] + cov[0][1] / cov[0][0] * (x - mean[0]);
        let (a, b) = (center[1] - half_chord, center[1] + half_chord);
        let inner = if cond_sd > 0.0 {
            normal_cdf((b - cm) / cond_sd) - normal_cdf((a - cm) / cond_sd)
        } else if (a..=b).contains(&cm) {
            1.0
        } else {
            0.0
        };
        density * inner * delta * t.cos()
    };
    simpson(integrand, lo, hi, 4000).clamp(0.0, 1.0)
}

/// Posterior mass of `{theta : |theta - theta0| < delta}`.
///
/// One-dimensional posteriors (scalar laws, or chains with `omega2` held
/// fixed) measure the ball in `mu` alone.
pub fn posterior_prob_ball(post: PosteriorRef<'_>, theta0: &Theta, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(invalid("delta", format!("must be positive, got {delta}")));
    }
    match post {
        PosteriorRef::Gaussian { post, .. } => Ok(match post.law {
            GaussianLaw::Scalar { mean, var } => {
                let sd = var.sqrt();
                normal_cdf((theta0.mu + delta - mean) / sd) - normal_cdf((theta0.mu - delta - mean) / sd)
            }
            GaussianLaw::Bivariate { mean, cov } => bivariate_ball_mass(
                [mean[0], mean[1]],
                [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]],
                [theta0.mu, theta0.omega2],
                delta,
            ),
        }),
        PosteriorRef::Samples { sample, .. } => {
            let inside = sample
                .draws
                .iter()
                .filter(|t| {
                    let dm = t.mu - theta0.mu;
                    let dw = if sample.dim == 1 { 0.0 } else { t.omega2 - theta0.omega2 };
                    (dm * dm + dw * dw).sqrt() < delta
                })
                .count();
            Ok(inside as f64 / sample.draws.len().max(1) as f64)
        }
    }
}
