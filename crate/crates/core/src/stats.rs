//! Distribution helpers and sample diagnostics shared by the posterior and
//! experiment code.

use std::f64::consts::PI;

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{invalid, Result};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

pub fn chi2_cdf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ChiSquared::new(df).expect("positive degrees of freedom").cdf(x)
}

/// `z_{(1+level)/2}`, the two-sided normal critical value.
pub fn two_sided_z(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid("level", format!("must lie in (0, 1), got {level}")));
    }
    Ok(normal_quantile(0.5 * (1.0 + level)))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn median(x: &[f64]) -> f64 {
    let mut v: Vec<f64> = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Monte Carlo standard error of the mean of a correlated series by
/// non-overlapping batch means (`sqrt(N)` batches).
pub fn batch_means_se(x: &[f64]) -> f64 {
    let n = x.len();
    let batches = (n as f64).sqrt().floor().max(2.0) as usize;
    let size = n / batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = x.chunks_exact(size).map(mean).collect();
    (variance(&means) / means.len() as f64).sqrt()
}

/// Kolmogorov–Smirnov distance between the empirical law of `sample` and `cdf`.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v: Vec<f64> = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}

/// Total variation between two normals discretized on `bins` equal bins
/// spanning both densities to six standard deviations.
pub fn tv_normals_binned(m1: f64, v1: f64, m2: f64, v2: f64, bins: usize) -> f64 {
    let (s1, s2) = (v1.sqrt(), v2.sqrt());
    let lo = (m1 - 6.0 * s1).min(m2 - 6.0 * s2);
    let hi = (m1 + 6.0 * s1).max(m2 + 6.0 * s2);
    let width = (hi - lo) / bins as f64;
    let cdf = |x: f64, m: f64, s: f64| normal_cdf((x - m) / s);
    0.5 * (0..bins)
        .map(|k| {
            let a = lo + k as f64 * width;
            let b = a + width;
            let p = cdf(b, m1, s1) - cdf(a, m1, s1);
            let q = cdf(b, m2, s2) - cdf(a, m2, s2);
            (p - q).abs()
        })
        .sum::<f64>()
}

/// Total variation between a sample histogram and a normal on `bins` bins
/// over `mean +- 4 sd`, with the two tails as extra cells.
pub fn tv_sample_vs_normal(sample: &[f64], mean: f64, var: f64, bins: usize) -> f64 {
    let sd = var.sqrt();
    let lo = mean - 4.0 * sd;
    let width = 8.0 * sd / bins as f64;
    let mut counts = vec![0usize; bins + 2];
    for &x in sample {
        let cell = if x < lo {
            0
        } else {
            (((x - lo) / width).floor() as usize + 1).min(bins + 1)
        };
        counts[cell] += 1;
    }
    let n = sample.len() as f64;
    let edge = |k: usize| normal_cdf((lo + k as f64 * width - mean) / sd);
    let mut tv = 0.0;
    for (cell, &c) in counts.iter().enumerate() {
        let p = match cell {
            0 => edge(0),
            c if c == bins + 1 => 1.0 - edge(bins),
            c => edge(c) - edge(c - 1),
        };
        tv += (c as f64 / n - p).abs();
    }
    0.5 * tv
}

/// Largest gap between a 2-D histogram density and the standard bivariate
/// normal density over a `bins x bins` grid on `[-half_width, half_width]^2`.
pub fn grid_density_discrepancy(points: &[[f64; 2]], bins: usize, half_width: f64) -> f64 {
    let width = 2.0 * half_width / bins as f64;
    let mut counts = vec![0usize; bins * bins];
    for p in points {
        let i = ((p[0] + half_width) / width).floor();
        let j = ((p[1] + half_width) / width).floor();
        if i >= 0.0 && j >= 0.0 && (i as usize) < bins && (j as usize) < bins {
            counts[i as usize * bins + j as usize] += 1;
        }
    }
    let norm = points.len() as f64 * width * width;
    let mut sup = 0.0f64;
    for i in 0..bins {
        for j in 0..bins {
            let x = -half_width + (i as f64 + 0.5) * width;
            let y = -half_width + (j as f64 + 0.5) * width;
            let phi = (-(x * x + y * y) / 2.0).exp() / (2.0 * PI);
            sup = sup.max((counts[i * bins + j] as f64 / norm - phi).abs());
        }
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn quantiles() {
        assert_abs_diff_eq!(two_sided_z(0.95).unwrap(), 1.959_963_984_540_054, epsilon = 1e-9);
        assert!(two_sided_z(1.0).is_err());
        assert!(two_sided_z(0.0).is_err());
        assert_abs_diff_eq!(normal_cdf(1.0) - normal_cdf(-1.0), 0.682_689_492_137_086, epsilon = 1e-12);
        assert_abs_diff_eq!(chi2_cdf(2.0, 2.0), 1.0 - (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn ks_of_normal_sample_is_small() {
        let mut rng = SeedTree::new(1).stream(&[0]);
        let x: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        assert!(ks_distance(&x, normal_cdf) < 0.015);
        let shifted: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        assert!(ks_distance(&shifted, normal_cdf) > 0.3);
    }

    #[test]
    fn tv_helpers() {
        assert_abs_diff_eq!(tv_normals_binned(0.0, 1.0, 0.0, 1.0, 50), 0.0, epsilon = 1e-15);
        let far = tv_normals_binned(0.0, 1.0, 100.0, 1.0, 50);
        assert!(far > 0.999);
        let mut rng = SeedTree::new(2).stream(&[0]);
        let x: Vec<f64> = (0..100_000).map(|_| 2.0 + 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(tv_sample_vs_normal(&x, 2.0, 9.0, 50) < 0.02);
        let pts: Vec<[f64; 2]> = (0..200_000)
            .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        assert!(grid_density_discrepancy(&pts, 50, 3.0) < 0.03);
    }

    #[test]
    fn batch_means_matches_iid_se() {
        let mut rng = SeedTree::new(3).stream(&[0]);
        let x: Vec<f64> = (0..40_000).map(|_| rng.sample(StandardNormal)).collect();
        let se = batch_means_se(&x);
        assert!((se / (1.0 / 200.0) - 1.0).abs() < 0.2, "{se}");
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
