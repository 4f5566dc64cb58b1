use rand::Rng;
use rand_distr::StandardNormal;

use super::log_lik_single;
use crate::error::{invalid, Result};
use crate::model::{ModelSpec, Theta};
use crate::sim::{simulate_subject, StatSource};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of `K(theta0, theta) = E_theta0[log f(X|theta0) - log f(X|theta)]`
/// for a single subject observed on `[0, T]` from `x0`.
///
/// The unit model is sampled exactly; other models go through an
/// Euler–Maruyama path with `steps` steps.
#[allow(clippy::too_many_arguments)]
pub fn kl_mc<R: Rng + ?Sized>(
    theta0: &Theta,
    theta: &Theta,
    model: &ModelSpec,
    x0: f64,
    horizon: f64,
    nsim: usize,
    steps: usize,
    rng: &mut R,
) -> Result<KlEstimate> {
    if nsim < 2 {
        return Err(invalid("nsim", format!("need at least two simulations, got {nsim}")));
    }
    let source = if model.is_unit() {
        StatSource::Exact
    } else {
        StatSource::Path { steps }
    };
    let sd0 = theta0.omega2.sqrt();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..nsim {
        let z: f64 = rng.sample(StandardNormal);
        let phi = theta0.mu + sd0 * z;
        let s = simulate_subject(model, phi, x0, horizon, source, rng)?;
        let term = log_lik_single(theta0, &s) - log_lik_single(theta, &s);
        sum += term;
        sum_sq += term * term;
    }
    let n = nsim as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(KlEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
    })
}
