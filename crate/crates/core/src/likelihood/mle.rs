//! Box-constrained maximum likelihood and the quantities built on it.

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use super::{hessian, log_lik_total, Dataset, LikelihoodKernel};
use crate::error::{Error, Result};
use crate::model::{ParamSpace, Theta};

/// Minimum eigenvalue below which the observed information is replaced by the identity.
pub const FISHER_PD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    /// Starts in addition to the caller's initial point: the box center plus
    /// `starts - 1` Latin-hypercube points.
    pub starts: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            max_iter: 500,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleFit {
    pub theta: Theta,
    pub log_lik: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Latin-hypercube fractions: strata midpoints of a 4x4 grid, one per row and column.
const LHS_FRACTIONS: [(f64, f64); 4] = [(0.125, 0.625), (0.375, 0.125), (0.625, 0.875), (0.875, 0.375)];

fn start_points(space: &ParamSpace, init: &Theta, starts: usize) -> Vec<Theta> {
    let mut points = vec![space.clamp(*init)];
    if starts >= 1 {
        points.push(space.center());
    }
    for i in 0..starts.saturating_sub(1) {
        let (a, b) = LHS_FRACTIONS[i % LHS_FRACTIONS.len()];
        // later cycles are nudged so repeated strata do not duplicate points
        let shift = (i / LHS_FRACTIONS.len()) as f64 * 0.0625;
        let (a, b) = ((a + shift).fract(), (b + shift).fract());
        // omega2 strata are laid out on a log scale
        let lw = space.omega2_lo.ln() + b * (space.omega2_hi.ln() - space.omega2_lo.ln());
        points.push(Theta {
            mu: space.mu_lo + a * (space.mu_hi - space.mu_lo),
            omega2: lw.exp(),
        });
    }
    points
}

fn blocked(theta: &Theta, g: &Vector2<f64>, space: &ParamSpace) -> [bool; 2] {
    let at = |x: f64, lo: f64, hi: f64, gk: f64| (x <= lo && gk < 0.0) || (x >= hi && gk > 0.0);
    [
        at(theta.mu, space.mu_lo, space.mu_hi, g[0]),
        at(theta.omega2, space.omega2_lo, space.omega2_hi, g[1]),
    ]
}

fn ascent_direction(g: &Vector2<f64>, h: &Matrix2<f64>, fixed: [bool; 2]) -> Vector2<f64> {
    let free: Vec<usize> = (0..2).filter(|&k| !fixed[k]).collect();
    let scaled_gradient = |k: usize| g[k] / h[(k, k)].abs().max(1e-12);
    match free.as_slice() {
        [k] => {
            let mut d = Vector2::zeros();
            d[*k] = if h[(*k, *k)] < 0.0 { -g[*k] / h[(*k, *k)] } else { scaled_gradient(*k) };
            d
        }
        [_, _] => {
            let neg_definite = h[(0, 0)] < 0.0 && h.determinant() > 0.0;
            match (neg_definite, h.try_inverse()) {
                (true, Some(inv)) => -(inv * g),
                _ => Vector2::new(scaled_gradient(0), scaled_gradient(1)),
            }
        }
        _ => Vector2::zeros(),
    }
}

fn local_ascent(kernel: &LikelihoodKernel, space: &ParamSpace, start: Theta, opts: &MleOptions) -> MleFit {
    let mut theta = space.clamp(start);
    let mut ll = kernel.log_lik(&theta);
    let stall_tol = 1e-6 * (1.0 + kernel.len() as f64);
    for it in 0..opts.max_iter {
        let g = kernel.score(&theta);
        let fixed = blocked(&theta, &g, space);
        let pg = Vector2::new(
            if fixed[0] { 0.0 } else { g[0] },
            if fixed[1] { 0.0 } else { g[1] },
        );
        let pg_norm = pg.norm();
        if pg_norm < opts.grad_tol {
            return MleFit { theta, log_lik: ll, converged: true, iterations: it };
        }
        let d = ascent_direction(&g, &kernel.hessian(&theta), fixed);
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let cand = space.clamp(Theta {
                mu: theta.mu + step * d[0],
                omega2: theta.omega2 + step * d[1],
            });
            let cand_ll = kernel.log_lik(&cand);
            if cand_ll > ll {
                theta = cand;
                ll = cand_ll;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            // no representable improvement along the ascent direction
            return MleFit { theta, log_lik: ll, converged: pg_norm < stall_tol, iterations: it };
        }
    }
    MleFit { theta, log_lik: ll, converged: false, iterations: opts.max_iter }
}

/// Multi-start projected Newton ascent on the box.
///
/// The returned fit is never worse than `init` (clamped into the box).
/// `converged` is false when the best start ran out of iterations.
pub fn mle(data: &Dataset, space: &ParamSpace, init: &Theta, opts: &MleOptions) -> Result<MleFit> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    space.validate()?;
    let kernel = LikelihoodKernel::new(data);
    let best = start_points(space, init, opts.starts)
        .into_iter()
        .map(|s| local_ascent(&kernel, space, s, opts))
        .fold(None::<MleFit>, |best, fit| match best {
            Some(b) if b.log_lik >= fit.log_lik => Some(b),
            _ => Some(fit),
        })
        .expect("at least one start");
    Ok(MleFit {
        log_lik: log_lik_total(&best.theta, data),
        ..best
    })
}

/// Closed-form maximizer in `mu` at fixed `omega2`: `sum(U/D) / sum(V/D)`.
pub fn mle_mu_given_omega2(data: &Dataset, omega2: f64) -> Option<f64> {
    let (su, sv) = LikelihoodKernel::new(data).weighted_sums(omega2);
    (sv > 0.0).then(|| su / sv)
}

/// Observed information `-l''(theta_hat)`, or the identity when that is not
/// positive definite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherInfo {
    pub matrix: Matrix2<f64>,
    pub fallback_used: bool,
}

impl FisherInfo {
    /// Covariance `Sigma_n`, the inverse of the information.
    pub fn covariance(&self) -> Matrix2<f64> {
        self.matrix
            .try_inverse()
            .unwrap_or_else(Matrix2::identity)
    }

    /// Symmetric square root of the information, `Sigma_n^{-1/2}`.
    pub fn sqrt(&self) -> Matrix2<f64> {
        let eig = SymmetricEigen::new(self.matrix);
        let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        eig.eigenvectors * Matrix2::from_diagonal(&root) * eig.eigenvectors.transpose()
    }
}

pub fn observed_fisher(data: &Dataset, theta_hat: &Theta) -> FisherInfo {
    let info = -hessian(theta_hat, data);
    let info = 0.5 * (info + info.transpose());
    let min_eig = SymmetricEigen::new(info).eigenvalues.min();
    if min_eig.is_finite() && min_eig > FISHER_PD_TOL {
        FisherInfo { matrix: info, fallback_used: false }
    } else {
        FisherInfo { matrix: Matrix2::identity(), fallback_used: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrtResult {
    /// `-2 log beta_n = 2 (l(theta_hat) - l(theta0))`, clamped at zero.
    pub z2: f64,
    pub fit: MleFit,
}

pub fn lrt_stat(data: &Dataset, theta0: &Theta, space: &ParamSpace, opts: &MleOptions) -> Result<LrtResult> {
    let fit = mle(data, space, theta0, opts)?;
    let z2 = (2.0 * (fit.log_lik - log_lik_total(theta0, data))).max(0.0);
    Ok(LrtResult { z2, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{design_sequence, DesignKind, ModelSpec};
    use crate::rng::SeedTree;
    use crate::sim::{simulate_dataset, StatSource, SuffStats};
    use approx::assert_abs_diff_eq;

    fn unit_dataset(theta: &Theta, kind: DesignKind, n: usize, seed: u64) -> Dataset {
        let design = design_sequence(kind, n, 0.0).unwrap();
        simulate_dataset(&ModelSpec::unit(), theta, &design, StatSource::Exact, &SeedTree::new(seed), &[0]).unwrap()
    }

    #[test]
    fn profile_mu_matches_closed_form() {
        let data = unit_dataset(&Theta::new(1.0, 1.0).unwrap(), DesignKind::HarmonicRatio(5.0), 40, 1);
        let w = 1.0;
        let (mut su, mut sv) = (0.0, 0.0);
        for s in &data.stats {
            su += s.u / (1.0 + w * s.v);
            sv += s.v / (1.0 + w * s.v);
        }
        let mu_hat = mle_mu_given_omega2(&data, w).unwrap();
        assert_abs_diff_eq!(mu_hat, su / sv, epsilon = 1e-12);
        let g = crate::likelihood::score(&Theta::new(mu_hat, w).unwrap(), &data);
        assert!(g[0].abs() < 1e-10);
        assert!(mle_mu_given_omega2(&Dataset::new(vec![SuffStats::from_uv(0.0, 0.0)]).unwrap(), 1.0).is_none());
    }

    #[test]
    fn single_subject_information_concentrates() {
        let mu_star = 0.37;
        let v = 1e4;
        let data = Dataset::new(vec![SuffStats::from_uv(mu_star * v, v)]).unwrap();
        assert!((mle_mu_given_omega2(&data, 1.0).unwrap() - mu_star).abs() < 1e-2);
    }

    #[test]
    fn mle_is_stationary_and_beats_init() {
        let theta0 = Theta::new(1.0, 1.0).unwrap();
        let space = ParamSpace::default();
        for seed in 0..20 {
            let data = unit_dataset(&theta0, DesignKind::HarmonicRatio(5.0), 300, seed);
            let init = Theta::new(-3.0, 20.0).unwrap();
            let fit = mle(&data, &space, &init, &MleOptions::default()).unwrap();
            assert!(fit.converged);
            assert!(space.contains(&fit.theta));
            assert!(fit.log_lik >= log_lik_total(&init, &data));
            if fit.theta.omega2 > space.omega2_lo {
                let g = crate::likelihood::score(&fit.theta, &data);
                assert!(g.norm() < 1e-6, "{g:?}");
            }
        }
    }

    #[test]
    fn mle_is_permutation_invariant() {
        let data = unit_dataset(&Theta::new(0.5, 2.0).unwrap(), DesignKind::HarmonicRatio(3.0), 100, 3);
        let mut rev = data.clone();
        rev.stats.reverse();
        let space = ParamSpace::default();
        let a = mle(&data, &space, &space.center(), &MleOptions::default()).unwrap();
        let b = mle(&rev, &space, &space.center(), &MleOptions::default()).unwrap();
        assert_abs_diff_eq!(a.theta.mu, b.theta.mu, epsilon = 1e-8);
        assert_abs_diff_eq!(a.theta.omega2, b.theta.omega2, epsilon = 1e-8);
    }

    #[test]
    fn mle_at_boundary_when_variance_is_underdispersed() {
        // identical U values: the variance MLE collapses to the lower bound
        let data = Dataset::new(vec![SuffStats::from_uv(5.0, 5.0); 10]).unwrap();
        let space = ParamSpace::default();
        let fit = mle(&data, &space, &Theta::new(0.0, 1.0).unwrap(), &MleOptions::default()).unwrap();
        assert_eq!(fit.theta.omega2, space.omega2_lo);
        assert_abs_diff_eq!(fit.theta.mu, 1.0, epsilon = 1e-8);
        assert!(fit.converged);
    }

    #[test]
    fn mle_rejects_empty() {
        let space = ParamSpace::default();
        assert_eq!(
            mle(&Dataset::default(), &space, &space.center(), &MleOptions::default()).unwrap_err(),
            Error::EmptyDataset
        );
    }

    #[test]
    fn fisher_mu_block_and_fallback() {
        let data = Dataset::new(vec![SuffStats::from_uv(5.0, 5.0), SuffStats::from_uv(5.0, 5.0)]).unwrap();
        let theta = Theta::new(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(-hessian(&theta, &data)[(0, 0)], 5.0 / 3.0, epsilon = 1e-14);
        // zero residual leaves positive omega2 curvature, so the full matrix is not PD
        let info = observed_fisher(&data, &theta);
        assert!(info.fallback_used);
        let data = Dataset::new(vec![SuffStats::from_uv(15.0, 5.0), SuffStats::from_uv(-5.0, 5.0)]).unwrap();
        let info = observed_fisher(&data, &theta);
        assert!(!info.fallback_used);
        assert_abs_diff_eq!(info.matrix[(0, 0)], 5.0 / 3.0, epsilon = 1e-14);

        let empty_info = Dataset::new(vec![SuffStats::from_uv(0.0, 0.0); 4]).unwrap();
        let info = observed_fisher(&empty_info, &Theta::new(0.0, 1.0).unwrap());
        assert!(info.fallback_used);
        assert_eq!(info.matrix, Matrix2::identity());
    }

    #[test]
    fn fisher_sqrt_squares_back() {
        let data = unit_dataset(&Theta::new(1.0, 1.0).unwrap(), DesignKind::ConstantT(5.0), 200, 2);
        let space = ParamSpace::default();
        let fit = mle(&data, &space, &space.center(), &MleOptions::default()).unwrap();
        let info = observed_fisher(&data, &fit.theta);
        assert!(!info.fallback_used);
        let r = info.sqrt();
        assert!((r * r - info.matrix).norm() < 1e-9 * info.matrix.norm());
        assert!((r - r.transpose()).norm() < 1e-12 * r.norm());
    }

    #[test]
    fn lrt_is_zero_at_the_mle() {
        let data = unit_dataset(&Theta::new(1.0, 1.0).unwrap(), DesignKind::ConstantT(5.0), 100, 4);
        let space = ParamSpace::default();
        let opts = MleOptions::default();
        let fit = mle(&data, &space, &space.center(), &opts).unwrap();
        let lrt = lrt_stat(&data, &fit.theta, &space, &opts).unwrap();
        assert!(lrt.z2 >= 0.0 && lrt.z2 < 1e-9);
    }
}
