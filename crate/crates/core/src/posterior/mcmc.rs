use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{laplace_approx, GaussianLaw};
use crate::error::{invalid, Result};
use crate::likelihood::{Dataset, LikelihoodKernel, MleOptions};
use crate::model::{prior_log_density, validate_theta, ParamSpace, Prior, Theta};
use crate::rng::SeedTree;

/// Settings for one random-walk Metropolis chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetropolisConfig {
    /// Total iterations, burn-in included.
    pub steps: usize,
    pub burn_in: usize,
    /// Proposal standard deviations for `mu` and for `log omega2`.
    pub step_scale: [f64; 2],
    pub init: Option<Theta>,
}

impl MetropolisConfig {
    /// Enough iterations to retain `draws` after discarding the first 20%.
    pub fn with_draws(draws: usize, step_scale: [f64; 2]) -> Self {
        let steps = draws * 5 / 4;
        Self {
            steps,
            burn_in: steps - draws,
            step_scale,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcSample {
    pub draws: Vec<Theta>,
    pub accepted: usize,
    pub proposed: usize,
    pub acceptance_rate: f64,
    pub burn_in: usize,
    pub seed: u64,
    /// 1 when `omega2` was held fixed by the prior, 2 otherwise.
    pub dim: usize,
}

impl McmcSample {
    pub fn mu(&self) -> Vec<f64> {
        self.draws.iter().map(|t| t.mu).collect()
    }

    pub fn omega2(&self) -> Vec<f64> {
        self.draws.iter().map(|t| t.omega2).collect()
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        if k == 0 {
            self.mu()
        } else {
            self.omega2()
        }
    }
}

const SCALE_1D: f64 = 2.38;
const SCALE_2D: f64 = 2.38 / std::f64::consts::SQRT_2;

/// `2.38 / sqrt(d)` times the normal-approximation standard deviation of each
/// of the `d` sampled coordinates,
/// with the `omega2` scale translated to `log omega2`.
///
/// Falls back to prior spreads when the data carry no usable information.
pub fn default_step_scale(data: &Dataset, prior: &Prior, space: &ParamSpace) -> Result<[f64; 2]> {
    let prior_scale = match *prior {
        Prior::NormalMu { var, .. } => [SCALE_1D * var.sqrt(), 0.0],
        _ => [
            SCALE_2D * (space.mu_hi - space.mu_lo) / 12f64.sqrt(),
            SCALE_2D * (space.omega2_hi.ln() - space.omega2_lo.ln()) / 12f64.sqrt(),
        ],
    };
    if data.is_empty() {
        return Ok(prior_scale);
    }
    let lap = laplace_approx(data, prior, space, &MleOptions::default())?;
    if lap.fallback_used {
        return Ok(prior_scale);
    }
    Ok(match lap.law {
        GaussianLaw::Scalar { var, .. } => [SCALE_1D * var.sqrt(), 0.0],
        GaussianLaw::Bivariate { mean, cov } => {
            let w = mean[1].max(space.omega2_lo);
            [SCALE_2D * cov[(0, 0)].sqrt(), SCALE_2D * cov[(1, 1)].sqrt() / w]
        }
    })
}

fn initial_point(data: &Dataset, prior: &Prior, space: &ParamSpace) -> Theta {
    if let (false, Ok(lap)) = (data.is_empty(), laplace_approx(data, prior, space, &MleOptions::default())) {
        let (mu, _) = lap.mu();
        let omega2 = match lap.law {
            GaussianLaw::Bivariate { mean, .. } => mean[1],
            GaussianLaw::Scalar { .. } => space.center().omega2,
        };
        return space.clamp(Theta { mu, omega2 });
    }
    match *prior {
        Prior::NormalMu { mean, .. } => space.clamp(Theta { mu: mean, omega2: space.center().omega2 }),
        Prior::TruncatedNormalProduct { mu_mean, omega2_mean, .. } => space.clamp(Theta { mu: mu_mean, omega2: omega2_mean }),
        Prior::UniformBox => space.center(),
    }
}

/// Random-walk Metropolis targeting `exp(l_n(theta)) * prior(theta)` on the box.
///
/// Proposals move `mu` additively and `omega2` multiplicatively (a Gaussian
/// step on `log omega2`, with the matching Jacobian term). Proposals leaving
/// the box are rejected. When the prior fixes `omega2` the chain runs on `mu`
/// alone. The chain is a pure function of its inputs and `seed`.
pub fn rw_metropolis(
    data: &Dataset,
    prior: &Prior,
    space: &ParamSpace,
    config: &MetropolisConfig,
    seed: u64,
) -> Result<McmcSample> {
    prior.validate()?;
    space.validate()?;
    if config.steps < 1 {
        return Err(invalid("steps", "need at least one iteration"));
    }
    if config.burn_in >= config.steps {
        return Err(invalid("burn_in", format!("burn-in {} must be below steps {}", config.burn_in, config.steps)));
    }
    let fixed = prior.fixed_omega2();
    let dim = if fixed.is_some() { 1 } else { 2 };
    if config.step_scale[..dim].iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(invalid("step_scale", format!("proposal scales must be positive, got {:?}", config.step_scale)));
    }

    let kernel = LikelihoodKernel::new(data);
    let log_target = |t: &Theta| kernel.log_lik(t) + prior_log_density(prior, t, space);

    let mut current = config.init.unwrap_or_else(|| initial_point(data, prior, space));
    if let Some(w) = fixed {
        current.omega2 = w;
    }
    if !validate_theta(&current, space) {
        return Err(invalid("init", format!("starting point {current:?} lies outside the parameter box")));
    }
    let mut current_lp = log_target(&current);

    let mut rng = SeedTree::new(seed).stream(&[0x6d63_6d63]);
    let mut draws = Vec::with_capacity(config.steps - config.burn_in);
    let mut accepted = 0usize;
    for it in 0..config.steps {
        let z0: f64 = rng.sample(StandardNormal);
        let mut proposal = Theta {
            mu: current.mu + config.step_scale[0] * z0,
            omega2: current.omega2,
        };
        let mut log_jacobian = 0.0;
        if fixed.is_none() {
            let z1: f64 = rng.sample(StandardNormal);
            let step = config.step_scale[1] * z1;
            proposal.omega2 = current.omega2 * step.exp();
            log_jacobian = step;
        }
        let u: f64 = rng.random();
        if validate_theta(&proposal, space) {
            let lp = log_target(&proposal);
            if u.ln() < lp - current_lp + log_jacobian {
                current = proposal;
                current_lp = lp;
                accepted += 1;
            }
        }
        if it >= config.burn_in {
            draws.push(current);
        }
    }
    Ok(McmcSample {
        draws,
        accepted,
        proposed: config.steps,
        acceptance_rate: accepted as f64 / config.steps as f64,
        burn_in: config.burn_in,
        seed,
        dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{design_sequence, DesignKind, ModelSpec};
    use crate::posterior::conjugate_posterior_mu;
    use crate::sim::{simulate_dataset, StatSource};
    use crate::stats::{batch_means_se, mean, variance};

    fn unit_data(n: usize, seed: u64) -> Dataset {
        let design = design_sequence(DesignKind::ConstantT(5.0), n, 0.0).unwrap();
        simulate_dataset(&ModelSpec::unit(), &Theta::new(1.0, 1.0).unwrap(), &design, StatSource::Exact, &SeedTree::new(seed), &[0])
            .unwrap()
    }

    /// MC standard error of a sample variance via batch means of squared deviations.
    fn var_se(x: &[f64]) -> f64 {
        let m = mean(x);
        let sq: Vec<f64> = x.iter().map(|v| (v - m).powi(2)).collect();
        batch_means_se(&sq)
    }

    #[test]
    fn empty_data_recovers_prior() {
        let prior = Prior::NormalMu { mean: 0.5, var: 2.0, omega2: 1.0 };
        let space = ParamSpace::default();
        let scale = default_step_scale(&Dataset::default(), &prior, &space).unwrap();
        let cfg = MetropolisConfig::with_draws(100_000, scale);
        let s = rw_metropolis(&Dataset::default(), &prior, &space, &cfg, 1).unwrap();
        let mu = s.mu();
        assert_eq!(mu.len(), 100_000);
        assert!((mean(&mu) - 0.5).abs() < 3.0 * batch_means_se(&mu));
        assert!((variance(&mu) - 2.0).abs() < 3.0 * var_se(&mu));
    }

    #[test]
    fn matches_conjugate_posterior() {
        let data = unit_data(50, 3);
        let prior = Prior::NormalMu { mean: 0.0, var: 2.25, omega2: 1.0 };
        let space = ParamSpace::default();
        let scale = default_step_scale(&data, &prior, &space).unwrap();
        let s = rw_metropolis(&data, &prior, &space, &MetropolisConfig::with_draws(100_000, scale), 9).unwrap();
        let (m, v) = conjugate_posterior_mu(&data, 0.0, 2.25, 1.0).unwrap().mu();
        let mu = s.mu();
        assert!((mean(&mu) - m).abs() < 3.0 * batch_means_se(&mu));
        assert!((variance(&mu) - v).abs() < 3.0 * var_se(&mu));
        assert!(s.acceptance_rate > 0.1 && s.acceptance_rate < 0.6, "{}", s.acceptance_rate);
        assert!(s.omega2().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn two_parameter_chain_stays_in_box() {
        let data = unit_data(100, 4);
        let space = ParamSpace::new(-10.0, 10.0, 0.5, 1.5).unwrap();
        let scale = default_step_scale(&data, &Prior::UniformBox, &space).unwrap();
        let s = rw_metropolis(&data, &Prior::UniformBox, &space, &MetropolisConfig::with_draws(20_000, scale), 2).unwrap();
        assert!(s.draws.iter().all(|t| validate_theta(t, &space)));
        assert!(s.acceptance_rate > 0.1 && s.acceptance_rate < 0.6, "{}", s.acceptance_rate);
        assert_eq!(s.dim, 2);
        let again = rw_metropolis(&data, &Prior::UniformBox, &space, &MetropolisConfig::with_draws(20_000, scale), 2).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.accepted as f64 / s.proposed as f64, s.acceptance_rate);
    }

    #[test]
    fn rejects_bad_settings() {
        let data = unit_data(5, 1);
        let space = ParamSpace::default();
        let mut cfg = MetropolisConfig::with_draws(100, [0.0, 0.1]);
        assert!(rw_metropolis(&data, &Prior::UniformBox, &space, &cfg, 0).is_err());
        cfg.step_scale = [0.1, -1.0];
        assert!(rw_metropolis(&data, &Prior::UniformBox, &space, &cfg, 0).is_err());
        cfg.step_scale = [0.1, 0.1];
        cfg.burn_in = cfg.steps;
        assert!(rw_metropolis(&data, &Prior::UniformBox, &space, &cfg, 0).is_err());
    }
}
