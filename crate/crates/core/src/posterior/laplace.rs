use nalgebra::{Matrix2, Vector2};

use super::{GaussianLaw, GaussianPosterior, PosteriorKind};
use crate::error::Result;
use crate::likelihood::{mle, mle_mu_given_omega2, observed_fisher, Dataset, LikelihoodKernel, MleOptions, FISHER_PD_TOL};
use crate::model::{ParamSpace, Prior};

/// Normal approximation `N(theta_hat, Sigma_n)` with `Sigma_n` the inverse
/// observed information at the MLE.
///
/// A prior that pins `omega2` selects the one-parameter sub-model in `mu`;
/// the approximation itself is centred at the MLE and does not include the
/// prior density (see [`GaussianPosterior::with_normal_prior`]).
pub fn laplace_approx(data: &Dataset, prior: &Prior, space: &ParamSpace, opts: &MleOptions) -> Result<GaussianPosterior> {
    prior.validate()?;
    if let Some(omega2) = prior.fixed_omega2() {
        let (_, info) = LikelihoodKernel::new(data).weighted_sums(omega2);
        let post = match mle_mu_given_omega2(data, omega2) {
            Some(mu_hat) if info > FISHER_PD_TOL => GaussianPosterior {
                law: GaussianLaw::Scalar { mean: mu_hat, var: 1.0 / info },
                kind: PosteriorKind::Laplace,
                fallback_used: false,
            },
            _ => GaussianPosterior {
                law: GaussianLaw::Scalar {
                    mean: space.center().mu,
                    var: 1.0,
                },
                kind: PosteriorKind::Laplace,
                fallback_used: true,
            },
        };
        return Ok(post);
    }
    let fit = mle(data, space, &space.center(), opts)?;
    let info = observed_fisher(data, &fit.theta);
    let cov: Matrix2<f64> = info.covariance();
    Ok(GaussianPosterior {
        law: GaussianLaw::Bivariate {
            mean: Vector2::new(fit.theta.mu, fit.theta.omega2),
            cov: 0.5 * (cov + cov.transpose()),
        },
        kind: PosteriorKind::Laplace,
        fallback_used: info.fallback_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::conjugate_posterior_mu;
    use crate::rng::SeedTree;
    use crate::sim::{simulate_dataset, StatSource, SuffStats};
    use crate::model::{design_sequence, DesignKind, ModelSpec, Theta};
    use approx::assert_abs_diff_eq;

    fn data(n: usize) -> Dataset {
        let design = design_sequence(DesignKind::ConstantT(5.0), n, 0.0).unwrap();
        simulate_dataset(&ModelSpec::unit(), &Theta::new(1.0, 1.0).unwrap(), &design, StatSource::Exact, &SeedTree::new(5), &[0])
            .unwrap()
    }

    #[test]
    fn flat_prior_sub_model_matches_conjugacy() {
        let d = data(50);
        let prior = Prior::NormalMu { mean: 0.0, var: 2.25, omega2: 1.0 };
        let lap = laplace_approx(&d, &prior, &ParamSpace::default(), &MleOptions::default()).unwrap();
        let (_, v) = lap.mu();
        let sv: f64 = d.stats.iter().map(|s| s.v / (1.0 + s.v)).sum();
        assert_abs_diff_eq!(v, 1.0 / sv, epsilon = 1e-14);
        let adjusted = lap.with_normal_prior(0.0, 2.25).unwrap().mu();
        let exact = conjugate_posterior_mu(&d, 0.0, 2.25, 1.0).unwrap().mu();
        assert!((adjusted.0 - exact.0).abs() < 1e-10 * exact.0.abs());
        assert!((adjusted.1 - exact.1).abs() < 1e-10 * exact.1);
    }

    #[test]
    fn degenerate_data_falls_back() {
        let d = Dataset::new(vec![SuffStats::from_uv(0.0, 0.0); 5]).unwrap();
        let space = ParamSpace::default();
        let lap = laplace_approx(&d, &Prior::UniformBox, &space, &MleOptions::default()).unwrap();
        assert!(lap.fallback_used);
        match lap.law {
            GaussianLaw::Bivariate { cov, .. } => assert_eq!(cov, Matrix2::identity()),
            _ => panic!("expected bivariate law"),
        }
        let prior = Prior::NormalMu { mean: 0.0, var: 1.0, omega2: 1.0 };
        assert!(laplace_approx(&d, &prior, &space, &MleOptions::default()).unwrap().fallback_used);
    }

    #[test]
    fn two_parameter_law_is_positive_definite() {
        let lap = laplace_approx(&data(400), &Prior::UniformBox, &ParamSpace::default(), &MleOptions::default()).unwrap();
        let GaussianLaw::Bivariate { mean, cov } = lap.law else { panic!() };
        assert!(!lap.fallback_used);
        assert!(cov[(0, 0)] > 0.0 && cov.determinant() > 0.0);
        assert!((mean[0] - 1.0).abs() < 0.3);
    }
}
