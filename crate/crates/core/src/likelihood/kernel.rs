use nalgebra::{Matrix2, Vector2};

use super::Dataset;
use crate::model::Theta;

#[derive(Debug, Clone, Copy)]
struct Group {
    v: f64,
    count: f64,
    sum_u: f64,
    sum_u2: f64,
}

/// The likelihood regrouped by distinct `V`.
///
/// Subjects sharing a horizon (and hence `V` in the unit model) enter only
/// through `sum U` and `sum U^2`, so evaluation costs one term per distinct
/// `V` instead of one per subject. Used by the optimizer and the sampler.
#[derive(Debug, Clone)]
pub struct LikelihoodKernel {
    groups: Vec<Group>,
    n: usize,
}

impl LikelihoodKernel {
    pub fn new(data: &Dataset) -> Self {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.sort_by(|&a, &b| data.stats[a].v.total_cmp(&data.stats[b].v));
        let mut groups: Vec<Group> = Vec::new();
        for i in order {
            let s = &data.stats[i];
            match groups.last_mut() {
                Some(g) if g.v == s.v => {
                    g.count += 1.0;
                    g.sum_u += s.u;
                    g.sum_u2 += s.u * s.u;
                }
                _ => groups.push(Group {
                    v: s.v,
                    count: 1.0,
                    sum_u: s.u,
                    sum_u2: s.u * s.u,
                }),
            }
        }
        Self { groups, n: data.len() }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn distinct_v(&self) -> usize {
        self.groups.len()
    }

    pub fn log_lik(&self, theta: &Theta) -> f64 {
        let (mu, w) = (theta.mu, theta.omega2);
        self.groups
            .iter()
            .map(|g| {
                let d = 1.0 + w * g.v;
                let quad = -g.count * mu * mu * g.v + 2.0 * mu * g.sum_u + w * g.sum_u2;
                -0.5 * g.count * d.ln() + quad / (2.0 * d)
            })
            .sum()
    }

    /// `sum (U - mu V)^2` within a group.
    #[inline]
    fn sum_r2(g: &Group, mu: f64) -> f64 {
        (g.sum_u2 - 2.0 * mu * g.v * g.sum_u + g.count * mu * mu * g.v * g.v).max(0.0)
    }

    pub fn score(&self, theta: &Theta) -> Vector2<f64> {
        let (mu, w) = (theta.mu, theta.omega2);
        self.groups.iter().fold(Vector2::zeros(), |acc, g| {
            let d = 1.0 + w * g.v;
            let sum_r = g.sum_u - g.count * mu * g.v;
            acc + Vector2::new(
                sum_r / d,
                -g.count * g.v / (2.0 * d) + Self::sum_r2(g, mu) / (2.0 * d * d),
            )
        })
    }

    pub fn hessian(&self, theta: &Theta) -> Matrix2<f64> {
        let (mu, w) = (theta.mu, theta.omega2);
        self.groups.iter().fold(Matrix2::zeros(), |acc, g| {
            let d = 1.0 + w * g.v;
            let sum_r = g.sum_u - g.count * mu * g.v;
            let mm = -g.count * g.v / d;
            let mw = -sum_r * g.v / (d * d);
            let ww = g.count * g.v * g.v / (2.0 * d * d) - Self::sum_r2(g, mu) * g.v / (d * d * d);
            acc + Matrix2::new(mm, mw, mw, ww)
        })
    }

    /// `(sum U/D, sum V/D)` at a fixed `omega2`.
    pub fn weighted_sums(&self, omega2: f64) -> (f64, f64) {
        self.groups.iter().fold((0.0, 0.0), |(su, sv), g| {
            let d = 1.0 + omega2 * g.v;
            (su + g.sum_u / d, sv + g.count * g.v / d)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{hessian, log_lik_total, score};
    use crate::rng::SeedTree;
    use crate::sim::SuffStats;
    use rand::Rng;

    #[test]
    fn grouped_matches_per_subject() {
        let mut rng = SeedTree::new(4).stream(&[0]);
        let horizons = [0.5, 1.0, 5.0];
        let data = Dataset::new(
            (0..200)
                .map(|i| SuffStats::from_uv(rng.random_range(-6.0..6.0), horizons[i % 3]))
                .collect(),
        )
        .unwrap();
        let kernel = LikelihoodKernel::new(&data);
        assert_eq!(kernel.distinct_v(), 3);
        let theta = Theta::new(0.8, 1.7).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
        assert!(rel(kernel.log_lik(&theta), log_lik_total(&theta, &data)) < 1e-12);
        let (g1, g2) = (kernel.score(&theta), score(&theta, &data));
        let (h1, h2) = (kernel.hessian(&theta), hessian(&theta, &data));
        for k in 0..2 {
            assert!(rel(g1[k], g2[k]) < 1e-10);
        }
        for (a, b) in h1.iter().zip(h2.iter()) {
            assert!(rel(*a, *b) < 1e-10);
        }
    }
}
