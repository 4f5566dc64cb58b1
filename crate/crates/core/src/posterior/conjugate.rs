use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{GaussianPosterior, PosteriorKind};
use crate::error::{invalid, Error, Result};
use crate::likelihood::{Dataset, LikelihoodKernel};
use crate::sim::EffectsCovariance;

fn check_prior(b2: f64, omega2: f64) -> Result<()> {
    if !(b2 > 0.0) {
        return Err(invalid("b2", format!("prior variance must be positive, got {b2}")));
    }
    if !(omega2 > 0.0) {
        return Err(invalid("omega2", format!("must be positive, got {omega2}")));
    }
    Ok(())
}

/// Posterior of `mu` under iid random effects with known `omega2` and an
/// `N(a, b2)` prior:
///
/// ```text
/// precision = sum V_i/(1 + omega2 V_i) + 1/b2
/// mean      = (sum U_i/(1 + omega2 V_i) + a/b2) / precision
/// ```
pub fn conjugate_posterior_mu(data: &Dataset, a: f64, b2: f64, omega2: f64) -> Result<GaussianPosterior> {
    check_prior(b2, omega2)?;
    let (su, sv) = LikelihoodKernel::new(data).weighted_sums(omega2);
    let precision = sv + 1.0 / b2;
    Ok(GaussianPosterior::scalar(
        (su + a / b2) / precision,
        1.0 / precision,
        PosteriorKind::ConjugateMu,
    ))
}

/// Factorization reused across datasets that share `V` and the effects
/// covariance.
///
/// Marginally `U | mu ~ N(mu v, M)` with `M = diag(V) + omega2 diag(V) Sigma diag(V)`.
/// Writing `S = diag(sqrt V)` gives `M = S K S` with `K = I + omega2 S Sigma S`,
/// which stays positive definite when some `V_i = 0`.
#[derive(Debug, Clone)]
pub struct DependentSolver {
    sqrt_v: DVector<f64>,
    factor: Cholesky<f64, Dyn>,
    /// `v' M^{-1} v`
    info: f64,
    /// `M^{-1} v` expressed in scaled coordinates, `K^{-1} s`.
    k_inv_s: DVector<f64>,
}

impl DependentSolver {
    pub fn new(v: &[f64], cov: &EffectsCovariance, omega2: f64) -> Result<Self> {
        let n = v.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if let Some(bad) = v.iter().find(|x| !(**x >= 0.0)) {
            return Err(invalid("V", format!("must be nonnegative, got {bad}")));
        }
        // Sigma itself must be a valid covariance, not just K
        cov.cholesky(n)?;
        let sqrt_v = DVector::from_iterator(n, v.iter().map(|x| x.sqrt()));
        let sigma = cov.matrix(n);
        let k = DMatrix::from_fn(n, n, |i, j| {
            let base = omega2 * sqrt_v[i] * sigma[(i, j)] * sqrt_v[j];
            if i == j {
                1.0 + base
            } else {
                base
            }
        });
        let factor = Cholesky::new(k).ok_or_else(|| {
            Error::NotPositiveDefinite(format!("marginal covariance of U for {cov:?}, n = {n}"))
        })?;
        let k_inv_s = factor.solve(&sqrt_v);
        let info = sqrt_v.dot(&k_inv_s);
        Ok(Self {
            sqrt_v,
            factor,
            info,
            k_inv_s,
        })
    }

    pub fn len(&self) -> usize {
        self.sqrt_v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sqrt_v.is_empty()
    }

    /// Likelihood precision `v' M^{-1} v`.
    pub fn information(&self) -> f64 {
        self.info
    }

    pub fn posterior(&self, u: &[f64], a: f64, b2: f64) -> Result<GaussianPosterior> {
        if u.len() != self.len() {
            return Err(invalid("U", format!("{} values for {} subjects", u.len(), self.len())));
        }
        // v' M^{-1} U = s' K^{-1} S^{-1} U; subjects with V = 0 carry no signal
        let scaled = DVector::from_iterator(
            u.len(),
            u.iter().zip(self.sqrt_v.iter()).map(|(&ui, &si)| if si > 0.0 { ui / si } else { 0.0 }),
        );
        let precision = self.info + 1.0 / b2;
        let mean = (self.k_inv_s.dot(&scaled) + a / b2) / precision;
        Ok(GaussianPosterior::scalar(mean, 1.0 / precision, PosteriorKind::DependentMu))
    }

    /// Cholesky factor of `K`, mostly for diagnostics.
    pub fn factor(&self) -> &Cholesky<f64, Dyn> {
        &self.factor
    }
}

/// Posterior of `mu` when `phi ~ N_n(mu 1, omega2 Sigma_n)`, derived from the
/// Gaussian marginal of `U` and a normal–normal update.
pub fn dependent_posterior_mu(
    data: &Dataset,
    cov: &EffectsCovariance,
    omega2: f64,
    a: f64,
    b2: f64,
) -> Result<GaussianPosterior> {
    check_prior(b2, omega2)?;
    let v: Vec<f64> = data.stats.iter().map(|s| s.v).collect();
    let u: Vec<f64> = data.stats.iter().map(|s| s.u).collect();
    DependentSolver::new(&v, cov, omega2)?.posterior(&u, a, b2)
}

/// The closed form for correlated effects in the shape it is usually printed,
///
/// ```text
/// mean = (omega2 1' Sigma^-1 (omega2 V + Sigma^-1)^-1 U + a/b2) / den
/// var  = omega2 / den
/// den  = 1' Sigma^-1 {Sigma - (omega2 V + Sigma^-1)^-1} Sigma^-1 1 + 1/b2
/// ```
///
/// It agrees with [`dependent_posterior_mu`] when `omega2 = 1` and is kept as
/// an independent regression route; it needs every `V_i > 0`.
pub fn dependent_posterior_mu_printed(
    data: &Dataset,
    cov: &EffectsCovariance,
    omega2: f64,
    a: f64,
    b2: f64,
) -> Result<GaussianPosterior> {
    check_prior(b2, omega2)?;
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let sigma = cov.matrix(n);
    let sigma_inv = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{cov:?}, n = {n}")))?
        .inverse();
    let mut inner = sigma_inv.clone();
    for (i, s) in data.stats.iter().enumerate() {
        inner[(i, i)] += omega2 * s.v;
    }
    let inner_inv = inner
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("omega2 V + Sigma^-1".into()))?
        .inverse();
    let ones = DVector::from_element(n, 1.0);
    let u = DVector::from_iterator(n, data.stats.iter().map(|s| s.u));
    let row = sigma_inv.transpose() * &ones;
    let num = omega2 * row.dot(&(&inner_inv * &u)) + a / b2;
    let den = row.dot(&((sigma - inner_inv) * (&sigma_inv * &ones))) + 1.0 / b2;
    Ok(GaussianPosterior::scalar(num / den, omega2 / den, PosteriorKind::DependentMu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{design_sequence, DesignKind, ModelSpec, Theta};
    use crate::rng::SeedTree;
    use crate::sim::{simulate_dataset, StatSource, SuffStats};
    use approx::assert_abs_diff_eq;

    fn two_subjects() -> Dataset {
        Dataset::new(vec![SuffStats::from_uv(5.0, 5.0), SuffStats::from_uv(5.0, 5.0)]).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn conjugate_hand_values() {
        let post = conjugate_posterior_mu(&two_subjects(), 0.0, 2.25, 1.0).unwrap();
        let (m, v) = post.mu();
        assert_abs_diff_eq!(v, 1.0 / (2.0 * 5.0 / 6.0 + 1.0 / 2.25), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.473_684, epsilon = 1e-6);
        assert_abs_diff_eq!(m, 0.789_474, epsilon = 1e-6);
    }

    #[test]
    fn no_information_returns_prior() {
        let data = Dataset::new(vec![SuffStats::from_uv(0.0, 0.0); 3]).unwrap();
        let (m, v) = conjugate_posterior_mu(&data, 0.7, 3.0, 1.0).unwrap().mu();
        assert_eq!((m, v), (0.7, 3.0));
        let (m, v) = dependent_posterior_mu(&data, &EffectsCovariance::Tridiagonal(0.3), 1.0, 0.7, 3.0)
            .unwrap()
            .mu();
        assert_abs_diff_eq!(m, 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 3.0, epsilon = 1e-15);
    }

    #[test]
    fn dependent_reduces_to_conjugate_for_identity() {
        let design = design_sequence(DesignKind::HarmonicRatio(5.0), 60, 0.0).unwrap();
        let data = simulate_dataset(
            &ModelSpec::unit(),
            &Theta::new(1.0, 1.0).unwrap(),
            &design,
            StatSource::Exact,
            &SeedTree::new(1),
            &[0],
        )
        .unwrap();
        for omega2 in [1.0, 0.3, 4.0] {
            let (m1, v1) = conjugate_posterior_mu(&data, 0.2, 2.25, omega2).unwrap().mu();
            let (m2, v2) = dependent_posterior_mu(&data, &EffectsCovariance::Iid, omega2, 0.2, 2.25)
                .unwrap()
                .mu();
            assert!(rel(m2, m1) < 1e-10 && rel(v2, v1) < 1e-10);
        }
        let (m1, v1) = conjugate_posterior_mu(&data, 0.2, 2.25, 1.0).unwrap().mu();
        let (m3, v3) = dependent_posterior_mu_printed(&data, &EffectsCovariance::Iid, 1.0, 0.2, 2.25)
            .unwrap()
            .mu();
        assert!(rel(m3, m1) < 1e-10 && rel(v3, v1) < 1e-10);
    }

    #[test]
    fn printed_form_matches_at_unit_variance() {
        let design = design_sequence(DesignKind::ConstantT(5.0), 40, 0.0).unwrap();
        let data = simulate_dataset(
            &ModelSpec::unit(),
            &Theta::new(1.0, 1.0).unwrap(),
            &design,
            StatSource::Exact,
            &SeedTree::new(2),
            &[0],
        )
        .unwrap();
        for cov in [EffectsCovariance::Tridiagonal(1.0 / 3.0), EffectsCovariance::CompoundSymmetry(1.0 / 3.0)] {
            let (m1, v1) = dependent_posterior_mu(&data, &cov, 1.0, 0.0, 2.25).unwrap().mu();
            let (m2, v2) = dependent_posterior_mu_printed(&data, &cov, 1.0, 0.0, 2.25).unwrap().mu();
            assert!(rel(m2, m1) < 1e-9, "{cov:?}: {m1} vs {m2}");
            assert!(rel(v2, v1) < 1e-9, "{cov:?}: {v1} vs {v2}");
        }
    }

    #[test]
    fn single_subject_dependent() {
        let data = Dataset::new(vec![SuffStats::from_uv(2.0, 3.0)]).unwrap();
        let (_, v) = dependent_posterior_mu(&data, &EffectsCovariance::CompoundSymmetry(0.5), 2.0, 0.0, 1.5)
            .unwrap()
            .mu();
        assert_abs_diff_eq!(v, 1.0 / (3.0 / 7.0 + 1.0 / 1.5), epsilon = 1e-14);
    }

    #[test]
    fn strong_dependence_keeps_variance_wide() {
        let var_at = |cov: EffectsCovariance, n: usize| {
            let solver = DependentSolver::new(&vec![5.0; n], &cov, 1.0).unwrap();
            solver.posterior(&vec![0.0; n], 0.0, 2.25).unwrap().mu().1
        };
        for n in [100, 1000] {
            let weak = var_at(EffectsCovariance::Tridiagonal(1.0 / 3.0), n);
            let strong = var_at(EffectsCovariance::CompoundSymmetry(1.0 / 3.0), n);
            if n == 1000 {
                assert!(strong.sqrt() >= 5.0 * weak.sqrt());
            }
            assert!(strong > weak);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = two_subjects();
        assert!(conjugate_posterior_mu(&data, 0.0, 0.0, 1.0).is_err());
        assert!(conjugate_posterior_mu(&data, 0.0, 1.0, -1.0).is_err());
        assert!(matches!(
            dependent_posterior_mu(&data, &EffectsCovariance::CompoundSymmetry(-2.0), 1.0, 0.0, 1.0),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert_eq!(
            dependent_posterior_mu(&Dataset::default(), &EffectsCovariance::Iid, 1.0, 0.0, 1.0).unwrap_err(),
            Error::EmptyDataset
        );
    }
}
