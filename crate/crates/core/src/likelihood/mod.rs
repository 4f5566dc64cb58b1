//! Marginal likelihood of `theta` with the random effect integrated out.
//!
//! With `D = 1 + omega2 V` each subject contributes
//!
//! ```text
//! log f = -1/2 log D + (-mu^2 V + 2 mu U + omega2 U^2) / (2 D)
//! ```
//!
//! which is finite at `V = 0`. The derivatives below follow from it with
//! `r = U - mu V`:
//!
//! ```text
//! d/dmu           = r / D
//! d/domega2       = -V / (2D) + r^2 / (2 D^2)
//! d2/dmu2         = -V / D
//! d2/dmu domega2  = -r V / D^2
//! d2/domega2^2    = V^2 / (2 D^2) - r^2 V / D^3
//! ```

mod kernel;
mod kl;
mod mle;

pub use kernel::LikelihoodKernel;
pub use kl::{kl_mc, KlEstimate};
pub use mle::{
    lrt_stat, mle, mle_mu_given_omega2, observed_fisher, FisherInfo, LrtResult, MleFit, MleOptions, FISHER_PD_TOL,
};

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::model::{Design, Theta};
use crate::sim::SuffStats;

/// The observed statistics of `n` subjects.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub stats: Vec<SuffStats>,
}

impl Dataset {
    pub fn new(stats: Vec<SuffStats>) -> Result<Self> {
        if let Some((i, s)) = stats
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.v >= 0.0 && s.v.is_finite() && s.u.is_finite()))
        {
            return Err(Error::InvalidArgument {
                field: "V",
                reason: format!("subject {i} has invalid statistics (U = {}, V = {})", s.u, s.v),
            });
        }
        Ok(Self { stats })
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn design(&self) -> Result<Design> {
        Design::new(
            self.stats.iter().map(|s| s.x0).collect(),
            self.stats.iter().map(|s| s.horizon).collect(),
        )
    }
}

/// Log-likelihood contribution of one subject.
#[inline]
pub fn log_lik_single(theta: &Theta, s: &SuffStats) -> f64 {
    let d = 1.0 + theta.omega2 * s.v;
    let quad = -theta.mu * theta.mu * s.v + 2.0 * theta.mu * s.u + theta.omega2 * s.u * s.u;
    -0.5 * d.ln() + quad / (2.0 * d)
}

pub fn log_lik_total(theta: &Theta, data: &Dataset) -> f64 {
    data.stats.iter().map(|s| log_lik_single(theta, s)).sum()
}

/// Gradient of [`log_lik_total`] in `(mu, omega2)`.
pub fn score(theta: &Theta, data: &Dataset) -> Vector2<f64> {
    data.stats.iter().fold(Vector2::zeros(), |acc, s| {
        let d = 1.0 + theta.omega2 * s.v;
        let r = s.u - theta.mu * s.v;
        acc + Vector2::new(r / d, -s.v / (2.0 * d) + r * r / (2.0 * d * d))
    })
}

/// Hessian of [`log_lik_total`] in `(mu, omega2)`.
pub fn hessian(theta: &Theta, data: &Dataset) -> Matrix2<f64> {
    data.stats.iter().fold(Matrix2::zeros(), |acc, s| {
        let d = 1.0 + theta.omega2 * s.v;
        let r = s.u - theta.mu * s.v;
        let mm = -s.v / d;
        let mw = -r * s.v / (d * d);
        let ww = s.v * s.v / (2.0 * d * d) - r * r * s.v / (d * d * d);
        acc + Matrix2::new(mm, mw, mw, ww)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    /// The likelihood exactly as written with `U/V` inside the square.
    fn literal_log_lik(theta: &Theta, u: f64, v: f64) -> f64 {
        let d = 1.0 + theta.omega2 * v;
        -0.5 * d.ln() - v / (2.0 * d) * (theta.mu - u / v).powi(2) + u * u / (2.0 * v)
    }

    fn random_dataset<R: Rng>(rng: &mut R, n: usize) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|_| SuffStats::from_uv(rng.random_range(-10.0..10.0), rng.random_range(0.0..8.0)))
                .collect(),
        )
        .unwrap()
    }

    fn random_theta<R: Rng>(rng: &mut R) -> Theta {
        Theta::new(rng.random_range(-3.0..3.0), rng.random_range(0.05..5.0)).unwrap()
    }

    #[test]
    fn known_values() {
        let any = Theta::new(2.3, 0.7).unwrap();
        assert_eq!(log_lik_single(&any, &SuffStats::from_uv(0.0, 0.0)), 0.0);
        let theta = Theta::new(0.0, 1.0).unwrap();
        let expected = -0.5 * 2f64.ln() + 0.25;
        assert_abs_diff_eq!(log_lik_single(&theta, &SuffStats::from_uv(1.0, 1.0)), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, -0.096_574, epsilon = 1e-6);
        // direct product 2^{-1/2} e^{-1/4} e^{1/2}
        assert_abs_diff_eq!(expected, (2f64.powf(-0.5) * (-0.25f64).exp() * 0.5f64.exp()).ln(), epsilon = 1e-15);
    }

    #[test]
    fn stable_form_matches_literal_form() {
        let mut rng = SeedTree::new(7).stream(&[0]);
        for _ in 0..10_000 {
            let theta = random_theta(&mut rng);
            let u = rng.random_range(-20.0..20.0);
            let v = 10f64.powf(rng.random_range(-8.0..2.0));
            let stable = log_lik_single(&theta, &SuffStats::from_uv(u, v));
            let literal = literal_log_lik(&theta, u, v);
            // the literal form cancels terms of size u^2 / 2v
            let scale = stable.abs().max(u * u / (2.0 * v)).max(1.0);
            assert!((stable - literal).abs() <= 1e-10 * scale, "{theta:?} u={u} v={v}: {stable} vs {literal}");
        }
    }

    #[test]
    fn total_is_additive_and_symmetric() {
        let theta = Theta::new(0.4, 1.3).unwrap();
        assert_eq!(log_lik_total(&theta, &Dataset::default()), 0.0);
        assert_eq!(score(&theta, &Dataset::default()), Vector2::zeros());
        let s = SuffStats::from_uv(1.7, 2.5);
        let two = Dataset::new(vec![s, s]).unwrap();
        assert_abs_diff_eq!(log_lik_total(&theta, &two), 2.0 * log_lik_single(&theta, &s), epsilon = 1e-14);
        let mut rng = SeedTree::new(2).stream(&[0]);
        let data = random_dataset(&mut rng, 30);
        let mut reversed = data.clone();
        reversed.stats.reverse();
        assert_abs_diff_eq!(log_lik_total(&theta, &data), log_lik_total(&theta, &reversed), epsilon = 1e-10);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = SeedTree::new(8).stream(&[0]);
        let h = 1e-6;
        for _ in 0..100 {
            let data = random_dataset(&mut rng, 20);
            let theta = random_theta(&mut rng);
            let g = score(&theta, &data);
            let at = |mu: f64, w: f64| Theta { mu, omega2: w };
            let fd = Vector2::new(
                (log_lik_total(&at(theta.mu + h, theta.omega2), &data)
                    - log_lik_total(&at(theta.mu - h, theta.omega2), &data))
                    / (2.0 * h),
                (log_lik_total(&at(theta.mu, theta.omega2 + h), &data)
                    - log_lik_total(&at(theta.mu, theta.omega2 - h), &data))
                    / (2.0 * h),
            );
            for k in 0..2 {
                assert!((g[k] - fd[k]).abs() / (1.0 + g[k].abs()) < 1e-5, "score {k}: {} vs {}", g[k], fd[k]);
            }
            let hs = hessian(&theta, &data);
            assert_eq!(hs[(0, 1)], hs[(1, 0)]);
            let dmu = (score(&at(theta.mu + h, theta.omega2), &data) - score(&at(theta.mu - h, theta.omega2), &data))
                / (2.0 * h);
            let dw = (score(&at(theta.mu, theta.omega2 + h), &data) - score(&at(theta.mu, theta.omega2 - h), &data))
                / (2.0 * h);
            let fd_h = Matrix2::new(dmu[0], dw[0], dmu[1], dw[1]);
            for (a, b) in hs.iter().zip(fd_h.iter()) {
                assert!((a - b).abs() / (1.0 + a.abs()) < 1e-4, "hessian {a} vs {b}");
            }
        }
    }

    #[test]
    fn mu_curvature_closed_form() {
        let data = Dataset::new(vec![SuffStats::from_uv(0.3, 5.0), SuffStats::from_uv(-1.2, 5.0)]).unwrap();
        let h = hessian(&Theta::new(0.1, 1.0).unwrap(), &data);
        assert_abs_diff_eq!(h[(0, 0)], -5.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_negative_v() {
        assert!(Dataset::new(vec![SuffStats::from_uv(1.0, -0.1)]).is_err());
    }
}
