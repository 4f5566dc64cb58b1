use std::collections::BTreeMap;

use nalgebra::{DMatrix, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{push_rows, sweep, Curve, ExperimentConfig, ExperimentKind, ExperimentResult, SummaryValue};
use crate::error::{invalid, Error, Result};
use crate::likelihood::{lrt_stat, mle, mle_mu_given_omega2, observed_fisher, Dataset, LikelihoodKernel};
use crate::model::{design_sequence, Design, ModelSpec, Prior};
use crate::posterior::{
    conjugate_posterior_mu, default_step_scale, hpd_normal, laplace_approx, posterior_prob_ball, rw_metropolis,
    classical_ci, DependentSolver, McmcSample, MetropolisConfig, PosteriorRef,
};
use crate::rng::{stream_id, SeedTree};
use crate::sim::{
    sample_effects_iid, sample_effects_with_factor, simulate_dataset, simulate_dataset_with_effects, simulate_path,
    suff_stats_discretized, SuffStats, EFFECTS_STREAM,
};
use crate::stats::{chi2_cdf, grid_density_discrepancy, ks_distance, mean, normal_cdf, tv_normals_binned};

const CHAIN_TAG: u64 = 0xc4a1;
const DRAWS_TAG: u64 = 0xd2a5;

/// Run whichever experiment `config` names.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    match config.experiment {
        ExperimentKind::Consistency => run_consistency(config),
        ExperimentKind::Normality => run_normality(config),
        ExperimentKind::Dependence => run_dependence(config),
        ExperimentKind::Intervals => run_intervals(config),
        ExperimentKind::Discretization => run_discretization(config),
        ExperimentKind::Lrt => run_lrt(config),
    }
}

fn prepare(config: &ExperimentConfig, expected: ExperimentKind) -> Result<ModelSpec> {
    if config.experiment != expected {
        return Err(invalid(
            "experiment",
            format!("expected `{}`, got `{}`", expected.label(), config.experiment.label()),
        ));
    }
    config.validate()?;
    config.model_spec()
}

fn design(config: &ExperimentConfig, n: usize) -> Result<Design> {
    design_sequence(config.design.kind(), n, config.x0)
}

/// iid-effects dataset of replicate `rep` at size `n`.
fn dataset(config: &ExperimentConfig, model: &ModelSpec, n: usize, rep: usize) -> Result<Dataset> {
    simulate_dataset(
        model,
        &config.theta0,
        &design(config, n)?,
        config.source.source(),
        &SeedTree::new(config.seed),
        &[n as u64, rep as u64],
    )
}

fn chain_seed(config: &ExperimentConfig, n: usize, rep: usize) -> u64 {
    stream_id(&[config.seed, CHAIN_TAG, n as u64, rep as u64])
}

fn chain(config: &ExperimentConfig, data: &Dataset, prior: &Prior, n: usize, rep: usize) -> Result<McmcSample> {
    let scale = match config.mcmc.step_scale {
        Some(s) => s,
        None => default_step_scale(data, prior, &config.space)?,
    };
    let draws = config.mcmc.draws;
    let burn_in = config.mcmc.burn_in.unwrap_or(draws / 4);
    let settings = MetropolisConfig { steps: draws + burn_in, burn_in, step_scale: scale, init: None };
    rw_metropolis(data, prior, &config.space, &settings, chain_seed(config, n, rep))
}

fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
    (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

/// Posterior variance of `mu`, its error, and the mass of the `delta`-ball around `theta0`.
pub fn run_consistency(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let model = prepare(config, ExperimentKind::Consistency)?;
    let prior = config.prior();
    let theta0 = config.theta0;
    let rows = sweep(config, &config.sample_sizes, &["post_var", "abs_err", "prob_ball"], |n, rep| {
        let data = dataset(config, &model, n, rep)?;
        if let Prior::NormalMu { mean, var, omega2 } = prior {
            let post = conjugate_posterior_mu(&data, mean, var, omega2)?;
            let (m, v) = post.mu();
            let ball = posterior_prob_ball(PosteriorRef::Gaussian { post: &post, component: 0 }, &theta0, config.delta)?;
            Ok(vec![v, (m - theta0.mu).abs(), ball])
        } else {
            let sample = chain(config, &data, &prior, n, rep)?;
            let mu = sample.mu();
            let m = mean(&mu);
            let v = crate::stats::variance(&mu);
            let ball = posterior_prob_ball(PosteriorRef::Samples { sample: &sample, component: 0 }, &theta0, config.delta)?;
            Ok(vec![v, (m - theta0.mu).abs(), ball])
        }
    });
    Ok(ExperimentResult::new(config, rows))
}

/// Kolmogorov–Smirnov and grid discrepancies of the standardized posterior
/// `Psi_n = Sigma_n^{-1/2} (theta - theta_hat_n)` against `N(0, I)`.
pub fn run_normality(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let model = prepare(config, ExperimentKind::Normality)?;
    let prior = config.prior();
    let opts = config.optimizer.options();
    let metrics = ["ks_mu", "ks_omega2", "ks_max", "grid_sup"];
    let rows = sweep(config, &config.sample_sizes, &metrics, |n, rep| {
        let data = dataset(config, &model, n, rep)?;
        let fit = mle(&data, &config.space, &config.space.center(), &opts)?;
        let info = observed_fisher(&data, &fit.theta);
        if info.fallback_used {
            return Err(Error::Numerical("observed information is not positive definite".into()));
        }
        let root = info.sqrt();
        let center = Vector2::new(fit.theta.mu, fit.theta.omega2);
        let draws: Vec<Vector2<f64>> = if config.normality.exact_draws {
            let l = info
                .covariance()
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("posterior covariance".into()))?
                .l();
            let mut rng = SeedTree::new(config.seed).stream(&[n as u64, rep as u64, DRAWS_TAG]);
            (0..config.mcmc.draws)
                .map(|_| center + l * Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect()
        } else {
            chain(config, &data, &prior, n, rep)?.draws.iter().map(|t| Vector2::new(t.mu, t.omega2)).collect()
        };
        let psi: Vec<[f64; 2]> = draws
            .iter()
            .map(|d| {
                let p = root * (d - center);
                [p[0], p[1]]
            })
            .collect();
        let coord = |k: usize| psi.iter().map(|p| p[k]).collect::<Vec<_>>();
        let ks_mu = ks_distance(&coord(0), normal_cdf);
        let ks_omega2 = ks_distance(&coord(1), normal_cdf);
        let grid = grid_density_discrepancy(&psi, config.normality.grid_bins, config.normality.grid_half_width);
        Ok(vec![ks_mu, ks_omega2, ks_mu.max(ks_omega2), grid])
    });
    let mut result = ExperimentResult::new(config, rows);
    for (metric, name) in [
        ("ks_max", "frac_ks_max_nonincreasing"),
        ("ks_mu", "frac_ks_mu_nonincreasing"),
        ("ks_omega2", "frac_ks_omega2_nonincreasing"),
    ] {
        let monotone = (0..config.replicates)
            .filter(|&rep| {
                let path: Vec<f64> = config
                    .sample_sizes
                    .iter()
                    .map(|&n| result.values(n, metric)[rep])
                    .collect();
                path.iter().all(|v| v.is_finite()) && path.windows(2).all(|w| w[1] <= w[0])
            })
            .count();
        result.extras.push(SummaryValue {
            n_or_m: None,
            name,
            value: monotone as f64 / config.replicates as f64,
        });
    }
    Ok(result)
}

struct DependenceCell {
    factors: [DMatrix<f64>; 2],
    /// Present when `V` is fixed by the design, so one factorization serves every replicate.
    solvers: Option<[DependentSolver; 2]>,
}

/// Posterior of `mu` under tridiagonal and compound-symmetric random effects.
pub fn run_dependence(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let model = prepare(config, ExperimentKind::Dependence)?;
    let Prior::NormalMu { mean: a, var: b2, omega2 } = config.prior() else {
        unreachable!("validated")
    };
    let structures = config.dependence.structures();
    let theta0 = config.theta0;
    let cells: BTreeMap<usize, DependenceCell> = config
        .sample_sizes
        .par_iter()
        .map(|&n| {
            let factors = [structures[0].cholesky(n)?, structures[1].cholesky(n)?];
            let solvers = if model.is_unit() {
                let v = design(config, n)?.horizons;
                Some([
                    DependentSolver::new(&v, &structures[0], omega2)?,
                    DependentSolver::new(&v, &structures[1], omega2)?,
                ])
            } else {
                None
            };
            Ok((n, DependenceCell { factors, solvers }))
        })
        .collect::<Result<_>>()?;
    let tree = SeedTree::new(config.seed);
    let metrics = [
        "tridiagonal_mean",
        "tridiagonal_var",
        "tridiagonal_cover5",
        "compound_mean",
        "compound_var",
        "compound_cover5",
    ];
    let rows = sweep(config, &config.sample_sizes, &metrics, |n, rep| {
        let cell = &cells[&n];
        let design = design(config, n)?;
        let mut out = Vec::with_capacity(6);
        for s in 0..2 {
            let key = [n as u64, rep as u64, s as u64];
            let mut effects_rng = tree.stream(&[key[0], key[1], key[2], EFFECTS_STREAM]);
            let phi = sample_effects_with_factor(theta0.mu, theta0.omega2, &cell.factors[s], &mut effects_rng);
            let data = simulate_dataset_with_effects(&model, &phi, &design, config.source.source(), &tree, &key)?;
            let u: Vec<f64> = data.stats.iter().map(|st| st.u).collect();
            let post = match &cell.solvers {
                Some(solvers) => solvers[s].posterior(&u, a, b2)?,
                None => {
                    let v: Vec<f64> = data.stats.iter().map(|st| st.v).collect();
                    DependentSolver::new(&v, &structures[s], omega2)?.posterior(&u, a, b2)?
                }
            };
            let (m, var) = post.mu();
            out.extend([m, var, f64::from((m - theta0.mu).abs() < 5.0 * var.sqrt())]);
        }
        Ok(out)
    });
    let mut result = ExperimentResult::new(config, rows);
    for &n in &config.sample_sizes {
        for (s, label) in [(0, "tridiagonal"), (1, "compound")] {
            let (m, v) = (result.values(n, metrics[3 * s])[0], result.values(n, metrics[3 * s + 1])[0]);
            if !(m.is_finite() && v > 0.0) {
                continue;
            }
            let points = config.dependence.curve_points;
            let sd = v.sqrt();
            let x: Vec<f64> = (0..points)
                .map(|k| m - 5.0 * sd + 10.0 * sd * k as f64 / (points - 1) as f64)
                .collect();
            let density = x.iter().map(|&x| normal_pdf(x, m, v)).collect();
            result.curves.push(Curve { label, n, x, density });
        }
    }
    Ok(result)
}

/// Wald intervals from the MLE of `mu` against HPD intervals of the conjugate posterior.
pub fn run_intervals(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let model = prepare(config, ExperimentKind::Intervals)?;
    let Prior::NormalMu { mean: a, var: b2, omega2 } = config.prior() else {
        unreachable!("validated")
    };
    let mu0 = config.theta0.mu;
    let metrics = ["ci_lo", "ci_hi", "ci_len", "ci_cover", "hpd_lo", "hpd_hi", "hpd_len", "hpd_cover"];
    let rows = sweep(config, &config.sample_sizes, &metrics, |n, rep| {
        let data = dataset(config, &model, n, rep)?;
        let mu_hat = mle_mu_given_omega2(&data, omega2)
            .ok_or_else(|| Error::Numerical("no information about mu".into()))?;
        let (_, info) = LikelihoodKernel::new(&data).weighted_sums(omega2);
        let ci = classical_ci(mu_hat, 1.0 / info, config.level)?;
        let (m, v) = conjugate_posterior_mu(&data, a, b2, omega2)?.mu();
        let hpd = hpd_normal(m, v, config.level)?;
        Ok(vec![
            ci.lo,
            ci.hi,
            ci.length(),
            f64::from(ci.contains(mu0)),
            hpd.lo,
            hpd.hi,
            hpd.length(),
            f64::from(hpd.contains(mu0)),
        ])
    });
    let mut result = ExperimentResult::new(config, rows);
    for &n in &config.sample_sizes {
        let ci = result.aggregate(n, "ci_len").map_or(f64::NAN, |a| a.mean);
        let hpd = result.aggregate(n, "hpd_len").map_or(f64::NAN, |a| a.mean);
        result.extras.push(SummaryValue { n_or_m: Some(n), name: "length_gap", value: ci - hpd });
    }
    Ok(result)
}

fn rms(a: &[SuffStats], b: &[SuffStats], f: impl Fn(&SuffStats) -> f64) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (f(x) - f(y)).powi(2)).sum();
    (ss / a.len() as f64).sqrt()
}

/// Mean and variance of `mu` under the configured prior.
fn mu_posterior(config: &ExperimentConfig, data: &Dataset) -> Result<(f64, f64)> {
    match config.prior() {
        Prior::NormalMu { mean, var, omega2 } => Ok(conjugate_posterior_mu(data, mean, var, omega2)?.mu()),
        prior => Ok(laplace_approx(data, &prior, &config.space, &config.optimizer.options())?.mu()),
    }
}

/// Statistics on coarse grids read off shared fine paths, against the fine-grid values.
pub fn run_discretization(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let model = prepare(config, ExperimentKind::Discretization)?;
    let n = config.sample_sizes[0];
    let d = &config.discretization;
    let tree = SeedTree::new(config.seed);
    let metrics = ["rms_u", "rms_v", "tv"];
    let replicate = |rep: usize| -> Result<Vec<Vec<f64>>> {
        let design = design(config, n)?;
        let phi = sample_effects_iid(n, &config.theta0, &mut tree.stream(&[n as u64, rep as u64, EFFECTS_STREAM]))?;
        let mut reference = Vec::with_capacity(n);
        let mut coarse: Vec<Vec<SuffStats>> = vec![Vec::with_capacity(n); d.m_grid.len()];
        for (i, &p) in phi.iter().enumerate() {
            let mut rng = tree.stream(&[n as u64, rep as u64, i as u64]);
            let fine = simulate_path(&model, p, design.x0[i], design.horizons[i], d.m_reference, &mut rng)?;
            reference.push(suff_stats_discretized(&fine, &model)?);
            for (k, &m) in d.m_grid.iter().enumerate() {
                coarse[k].push(suff_stats_discretized(&fine.coarsen(m)?, &model)?);
            }
        }
        let (m_ref, v_ref) = mu_posterior(config, &Dataset::new(reference.clone())?)?;
        coarse
            .into_iter()
            .map(|stats| {
                let (m, v) = mu_posterior(config, &Dataset::new(stats.clone())?)?;
                Ok(vec![
                    rms(&stats, &reference, |s| s.u),
                    rms(&stats, &reference, |s| s.v),
                    tv_normals_binned(m, v, m_ref, v_ref, d.bins),
                ])
            })
            .collect()
    };
    let outcomes: Vec<Result<Vec<Vec<f64>>>> = (0..config.replicates).into_par_iter().map(replicate).collect();
    let mut rows = Vec::new();
    for (k, &m) in d.m_grid.iter().enumerate() {
        for (rep, outcome) in outcomes.iter().enumerate() {
            push_rows(&mut rows, config.experiment, m, rep, &metrics, outcome.as_ref().map(|per_m| per_m[k].as_slice()));
        }
    }
    Ok(ExperimentResult::new(config, rows))
}

/// Likelihood-ratio statistics at the true parameter, with their fit to chi-square laws.
pub fn run_lrt(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let model = prepare(config, ExperimentKind::Lrt)?;
    let opts = config.optimizer.options();
    let rows = sweep(config, &config.sample_sizes, &["z2", "converged"], |n, rep| {
        let data = dataset(config, &model, n, rep)?;
        let lrt = lrt_stat(&data, &config.theta0, &config.space, &opts)?;
        Ok(vec![lrt.z2, f64::from(lrt.fit.converged)])
    });
    let mut result = ExperimentResult::new(config, rows);
    for &n in &config.sample_sizes {
        let z2: Vec<f64> = result.values(n, "z2").into_iter().filter(|v| v.is_finite()).collect();
        if z2.is_empty() {
            continue;
        }
        let extras = [
            ("ks_chi2_df1", ks_distance(&z2, |x| chi2_cdf(x, 1.0))),
            ("ks_chi2_df2", ks_distance(&z2, |x| chi2_cdf(x, 2.0))),
            ("mean_z2", mean(&z2)),
            ("frac_nonnegative", z2.iter().filter(|&&v| v >= 0.0).count() as f64 / z2.len() as f64),
        ];
        for (name, value) in extras {
            result.extras.push(SummaryValue { n_or_m: Some(n), name, value });
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::{DesignLabel, PriorLabel};
    use approx::assert_abs_diff_eq;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(kind);
        c.seed = 11;
        c.replicates = 4;
        c.sample_sizes = vec![10, 40];
        c.mcmc.draws = 2_000;
        c
    }

    #[test]
    fn consistency_variance_is_closed_form() {
        let mut c = small(ExperimentKind::Consistency);
        c.sample_sizes = vec![10, 100, 1000];
        let r = run_consistency(&c).unwrap();
        assert_eq!(r.rows.len(), 3 * 4 * 3);
        for &n in &c.sample_sizes {
            let expected = 1.0 / (n as f64 * 5.0 / 6.0 + 1.0 / 2.25);
            for v in r.values(n, "post_var") {
                assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
            }
        }
        assert!(r.values(1000, "prob_ball").iter().all(|&p| p > 0.99));
    }

    #[test]
    fn consistency_runs_on_chains_without_conjugacy() {
        let mut c = small(ExperimentKind::Consistency);
        c.prior.kind = PriorLabel::UniformBox;
        let r = run_consistency(&c).unwrap();
        assert_eq!(r.error_count(), 0);
        assert!(r.aggregate(40, "post_var").unwrap().mean < r.aggregate(10, "post_var").unwrap().mean);
    }

    #[test]
    fn runners_are_replay_exact_and_check_their_kind() {
        let c = small(ExperimentKind::Lrt);
        assert_eq!(run_lrt(&c).unwrap(), run_lrt(&c).unwrap());
        assert!(run_consistency(&c).is_err());
        let mut bad = c.clone();
        bad.replicates = 0;
        assert!(run_experiment(&bad).is_err());
    }

    #[test]
    fn normality_with_exact_draws_is_standard_normal() {
        let mut c = small(ExperimentKind::Normality);
        c.prior.kind = PriorLabel::UniformBox;
        c.normality.exact_draws = true;
        c.mcmc.draws = 50_000;
        c.replicates = 2;
        let r = run_normality(&c).unwrap();
        assert!(r.values(40, "ks_max").iter().all(|&k| k < 0.01));
        assert!(r.extra(None, "frac_ks_max_nonincreasing").is_some());
    }

    #[test]
    fn dependence_rows_and_curves() {
        let c = small(ExperimentKind::Dependence);
        let r = run_dependence(&c).unwrap();
        assert_eq!(r.rows.len(), 2 * 4 * 6);
        assert_eq!(r.curves.len(), 4);
        // V = T is fixed by the design, so posterior variances match across replicates
        let v = r.values(40, "compound_var");
        assert!(v.iter().all(|&x| x == v[0]));
        let curve = &r.curves[0];
        let mass: f64 = curve.density.iter().sum::<f64>() * (curve.x[1] - curve.x[0]);
        assert!((mass - 1.0).abs() < 1e-3);
    }

    #[test]
    fn interval_lengths_are_deterministic() {
        let mut c = small(ExperimentKind::Intervals);
        c.sample_sizes = vec![2, 3];
        let r = run_intervals(&c).unwrap();
        for len in r.values(2, "hpd_len") {
            assert_abs_diff_eq!(len, 2.697_879, epsilon = 1e-6);
        }
        assert!(r.extra(Some(2), "length_gap").unwrap() > r.extra(Some(3), "length_gap").unwrap());
    }

    #[test]
    fn unit_model_discretization_is_exact_in_u() {
        let mut c = small(ExperimentKind::Discretization);
        c.sample_sizes = vec![5];
        c.replicates = 2;
        c.source.steps = 1_000;
        c.discretization.m_grid = vec![10, 100];
        c.discretization.m_reference = 1_000;
        let r = run_discretization(&c).unwrap();
        for m in [10, 100] {
            assert!(r.values(m, "rms_u").iter().all(|&x| x == 0.0));
            assert!(r.values(m, "rms_v").iter().all(|&x| x == 0.0));
            assert!(r.values(m, "tv").iter().all(|&x| x < 1e-12));
        }
    }

    #[test]
    fn linear_model_discretization_error_shrinks() {
        let mut c = small(ExperimentKind::Discretization);
        c.model = "linear".into();
        c.x0 = 1.0;
        c.design = crate::lab::DesignConfig { kind: DesignLabel::Constant, value: 1.0 };
        c.sample_sizes = vec![10];
        c.replicates = 2;
        c.source.steps = 10_000;
        c.discretization.m_grid = vec![10, 100, 1_000];
        c.discretization.m_reference = 10_000;
        let r = run_discretization(&c).unwrap();
        let rms: Vec<f64> = [10, 100, 1_000].iter().map(|&m| r.aggregate(m, "rms_v").unwrap().mean).collect();
        assert!(rms[0] > rms[1] && rms[1] > rms[2], "{rms:?}");
    }

    #[test]
    fn lrt_summary_is_present() {
        let c = small(ExperimentKind::Lrt);
        let r = run_lrt(&c).unwrap();
        assert_eq!(r.extra(Some(40), "frac_nonnegative"), Some(1.0));
        assert!(r.values(40, "z2").iter().all(|&z| z >= 0.0));
    }
}
