//! Subcommand implementations.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde_json::{json, Map, Value};

use sde_lab::io::{
    fmt_num, read_stats_csv, write_curves_csv, write_draws_csv, write_results_csv, write_stats_csv,
    write_trajectory_csv,
};
use sde_lab::lab::{fingerprint, run_experiment, ExperimentConfig};
use sde_lab::likelihood::{mle, observed_fisher};
use sde_lab::model::design_sequence;
use sde_lab::posterior::{
    classical_ci_theta, conjugate_posterior_mu, default_step_scale, dependent_posterior_mu, hpd_interval,
    laplace_approx, rw_metropolis, GaussianLaw, GaussianPosterior, MetropolisConfig, PosteriorRef,
};
use sde_lab::sim::{
    sample_effects_dependent, sample_effects_iid, simulate_dataset_with_effects, simulate_path, EFFECTS_STREAM,
};
use sde_lab::{Dataset, ModelSpec, Prior, SeedTree, StatSource};

use crate::config::{
    parse_config, resolved_toml, DataConfig, FitConfig, PosteriorConfig, PosteriorMethod, RunConfig, SimulateConfig,
    SimulateOutput,
};
use crate::output::{sibling, to_json_text, write_atomic, Provenance, VERSION};
use crate::{CliError, Command, Format};

pub fn dispatch(
    command: Command,
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    format: Format,
) -> Result<Option<String>, CliError> {
    log::info!("{} with config {}", command.name(), config.display());
    match command {
        Command::Simulate => simulate(&parse_config(config, seed)?, out, format),
        Command::Fit => fit(&parse_config(config, seed)?, out, format),
        Command::Posterior => posterior(&parse_config(config, seed)?, out, format),
        Command::Experiment => experiment(&parse_config(config, seed)?, out, format),
    }
}

fn provenance<C: RunConfig>(command: Command, config: &mut C, hash: Option<String>) -> Provenance {
    let seed = *config.seed_mut();
    Provenance {
        tool: "sde-lab",
        version: VERSION,
        command: command.name(),
        config_hash: hash.unwrap_or_else(|| format!("{:016x}", fingerprint(&*config))),
        seed,
        config: resolved_toml(&*config),
    }
}

fn summary_line(prov: &Provenance, out: &Path, extra: Value) -> String {
    let mut obj = Map::new();
    obj.insert("command".into(), json!(prov.command));
    obj.insert("config_hash".into(), json!(prov.config_hash));
    obj.insert("seed".into(), json!(prov.seed));
    obj.insert("version".into(), json!(prov.version));
    obj.insert("out".into(), json!(out.display().to_string()));
    if let Value::Object(extra) = extra {
        obj.extend(extra);
    }
    serde_json::to_string(&Value::Object(obj)).expect("json values serialize")
}

/// Bytes of a CSV body produced by `write`, behind the provenance header.
fn csv_bytes(
    prov: &Provenance,
    write: impl FnOnce(&mut Vec<u8>) -> sde_lab::Result<()>,
) -> Result<Vec<u8>, CliError> {
    let mut buf = prov.csv_header().into_bytes();
    write(&mut buf)?;
    Ok(buf)
}

/// The dataset described by `data`: loaded from its path or simulated from `seed`.
///
/// Simulation uses the same streams as the experiment runners: subject `i`
/// draws from `[0, i]`, the effects from `[0, EFFECTS_STREAM]`.
fn load_data(data: &DataConfig, seed: u64) -> Result<Dataset, CliError> {
    if let Some(path) = &data.path {
        let file = File::open(path)
            .map_err(|e| CliError::Config(format!("cannot read data `{}`: {e}", path.display())))?;
        return read_stats_csv(BufReader::new(file)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())));
    }
    let model = ModelSpec::from_label(&data.model)?;
    let design = design_sequence(data.design.kind(), data.n, data.x0)?;
    let tree = SeedTree::new(seed);
    let phi = effects(data, &tree)?;
    Ok(simulate_dataset_with_effects(&model, &phi, &design, data.source.source(), &tree, &[0])?)
}

fn effects(data: &DataConfig, tree: &SeedTree) -> Result<Vec<f64>, CliError> {
    let mut rng = tree.stream(&[0, EFFECTS_STREAM]);
    let cov = data.effects.covariance();
    Ok(match cov {
        sde_lab::EffectsCovariance::Iid => sample_effects_iid(data.n, &data.theta0, &mut rng)?,
        _ => sample_effects_dependent(data.n, data.theta0.mu, data.theta0.omega2, &cov, &mut rng)?,
    })
}

/// Writes `(quantity, value)` pairs as CSV or JSON.
fn write_table(
    prov: &Provenance,
    out: &Path,
    format: Format,
    table: &[(&str, f64)],
) -> Result<Option<String>, CliError> {
    match format {
        Format::Csv => {
            let mut text = prov.csv_header();
            text.push_str("quantity,value\n");
            for (k, v) in table {
                text.push_str(&format!("{k},{}\n", fmt_num(*v)));
            }
            write_atomic(out, text.as_bytes())?;
            Ok(None)
        }
        Format::Json => {
            let results: Map<String, Value> = table.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
            let doc = json!({ "provenance": prov.json(), "results": results });
            write_atomic(out, to_json_text(&doc).as_bytes())?;
            Ok(Some(summary_line(prov, out, json!({ "results": results }))))
        }
    }
}

fn simulate(config: &SimulateConfig, out: &Path, format: Format) -> Result<Option<String>, CliError> {
    let mut config = config.clone();
    let prov = provenance(Command::Simulate, &mut config, None);
    let data_cfg = &config.data;
    match config.output {
        SimulateOutput::Stats => {
            let data = load_data(data_cfg, config.seed)?;
            match format {
                Format::Csv => write_atomic(out, &csv_bytes(&prov, |w| write_stats_csv(w, &data))?)?,
                Format::Json => {
                    let doc = json!({ "provenance": prov.json(), "stats": data.stats });
                    write_atomic(out, to_json_text(&doc).as_bytes())?;
                }
            }
            Ok((format == Format::Json).then(|| summary_line(&prov, out, json!({ "subjects": data.len() }))))
        }
        SimulateOutput::Trajectory => {
            let model = ModelSpec::from_label(&data_cfg.model)?;
            let design = design_sequence(data_cfg.design.kind(), data_cfg.n, data_cfg.x0)?;
            let tree = SeedTree::new(config.seed);
            let phi = effects(data_cfg, &tree)?;
            let StatSource::Path { steps } = data_cfg.source.source() else {
                unreachable!("validated")
            };
            let traj = simulate_path(&model, phi[0], design.x0[0], design.horizons[0], steps, &mut tree.stream(&[0, 0]))?;
            match format {
                Format::Csv => write_atomic(out, &csv_bytes(&prov, |w| write_trajectory_csv(w, &traj))?)?,
                Format::Json => {
                    let doc = json!({ "provenance": prov.json(), "phi": traj.phi, "t": traj.times, "x": traj.values });
                    write_atomic(out, to_json_text(&doc).as_bytes())?;
                }
            }
            Ok((format == Format::Json).then(|| summary_line(&prov, out, json!({ "steps": traj.steps(), "phi": traj.phi }))))
        }
    }
}

fn fit(config: &FitConfig, out: &Path, format: Format) -> Result<Option<String>, CliError> {
    let mut config = config.clone();
    let prov = provenance(Command::Fit, &mut config, None);
    let data = load_data(&config.data, config.seed)?;
    let opts = config.optimizer.options();
    let fit = mle(&data, &config.space, &config.space.center(), &opts)?;
    let info = observed_fisher(&data, &fit.theta);
    let cov = info.covariance();
    let ci_mu = classical_ci_theta(&fit.theta, &info, config.level, 0)?;
    let ci_w = classical_ci_theta(&fit.theta, &info, config.level, 1)?;
    let table = [
        ("n", data.len() as f64),
        ("mu_hat", fit.theta.mu),
        ("omega2_hat", fit.theta.omega2),
        ("log_lik", fit.log_lik),
        ("converged", f64::from(fit.converged)),
        ("iterations", fit.iterations as f64),
        ("info_mu_mu", info.matrix[(0, 0)]),
        ("info_mu_omega2", info.matrix[(0, 1)]),
        ("info_omega2_omega2", info.matrix[(1, 1)]),
        ("fallback_used", f64::from(info.fallback_used)),
        ("laplace_var_mu", cov[(0, 0)]),
        ("laplace_cov_mu_omega2", cov[(0, 1)]),
        ("laplace_var_omega2", cov[(1, 1)]),
        ("ci_mu_lo", ci_mu.lo),
        ("ci_mu_hi", ci_mu.hi),
        ("ci_omega2_lo", ci_w.lo),
        ("ci_omega2_hi", ci_w.hi),
    ];
    write_table(&prov, out, format, &table)
}

fn gaussian_table(post: &GaussianPosterior, level: f64) -> Result<Vec<(&'static str, f64)>, CliError> {
    let hpd = hpd_interval(PosteriorRef::Gaussian { post, component: 0 }, level)?;
    let (m, v) = post.mu();
    let mut table = vec![("mean_mu", m), ("var_mu", v), ("hpd_mu_lo", hpd.lo), ("hpd_mu_hi", hpd.hi)];
    if let GaussianLaw::Bivariate { mean, cov } = post.law {
        table.extend([("mean_omega2", mean[1]), ("var_omega2", cov[(1, 1)]), ("cov_mu_omega2", cov[(0, 1)])]);
    }
    table.push(("fallback_used", f64::from(post.fallback_used)));
    Ok(table)
}

fn posterior(config: &PosteriorConfig, out: &Path, format: Format) -> Result<Option<String>, CliError> {
    let mut config = config.clone();
    let prov = provenance(Command::Posterior, &mut config, None);
    let data = load_data(&config.data, config.seed)?;
    let prior = config.prior();
    let opts = config.optimizer.options();
    let table = match (config.method, prior) {
        (PosteriorMethod::Conjugate, Prior::NormalMu { mean, var, omega2 }) => {
            gaussian_table(&conjugate_posterior_mu(&data, mean, var, omega2)?, config.level)?
        }
        (PosteriorMethod::Dependent, Prior::NormalMu { mean, var, omega2 }) => {
            let cov = config.data.effects.covariance();
            gaussian_table(&dependent_posterior_mu(&data, &cov, omega2, mean, var)?, config.level)?
        }
        (PosteriorMethod::Laplace, prior) => {
            gaussian_table(&laplace_approx(&data, &prior, &config.space, &opts)?, config.level)?
        }
        (PosteriorMethod::Mcmc, prior) => return mcmc(&config, &prov, &data, &prior, out, format),
        _ => unreachable!("validated"),
    };
    write_table(&prov, out, format, &table)
}

fn mcmc(
    config: &PosteriorConfig,
    prov: &Provenance,
    data: &Dataset,
    prior: &Prior,
    out: &Path,
    format: Format,
) -> Result<Option<String>, CliError> {
    let scale = match config.mcmc.step_scale {
        Some(s) => s,
        None => default_step_scale(data, prior, &config.space)?,
    };
    let draws = config.mcmc.draws;
    let burn_in = config.mcmc.burn_in.unwrap_or(draws / 4);
    let settings = MetropolisConfig { steps: draws + burn_in, burn_in, step_scale: scale, init: None };
    let sample = rw_metropolis(data, prior, &config.space, &settings, config.seed)?;
    let hpd = hpd_interval(PosteriorRef::Samples { sample: &sample, component: 0 }, config.level)?;
    let mu = sample.mu();
    let w = sample.omega2();
    let summary = [
        ("acceptance_rate", sample.acceptance_rate),
        ("mean_mu", sde_lab::stats::mean(&mu)),
        ("var_mu", sde_lab::stats::variance(&mu)),
        ("mcse_mu", sde_lab::stats::batch_means_se(&mu)),
        ("hpd_mu_lo", hpd.lo),
        ("hpd_mu_hi", hpd.hi),
        ("mean_omega2", sde_lab::stats::mean(&w)),
        ("var_omega2", sde_lab::stats::variance(&w)),
    ];
    match format {
        Format::Csv => {
            write_atomic(out, &csv_bytes(prov, |w| write_draws_csv(w, &sample))?)?;
            write_table(prov, &sibling(out, "summary.csv"), format, &summary)
        }
        Format::Json => {
            let results: Map<String, Value> = summary.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
            let doc = json!({ "provenance": prov.json(), "results": results, "mu": mu, "omega2": w });
            write_atomic(out, to_json_text(&doc).as_bytes())?;
            Ok(Some(summary_line(prov, out, json!({ "results": results }))))
        }
    }
}

fn experiment(config: &ExperimentConfig, out: &Path, format: Format) -> Result<Option<String>, CliError> {
    let mut config = config.clone();
    let result = run_experiment(&config)?;
    let prov = provenance(Command::Experiment, &mut config, Some(result.config_hash.clone()));
    let summary = json!({
        "provenance": prov.json(),
        "experiment": result.experiment,
        "aggregates": result.aggregates,
        "extras": result.extras,
    });
    let counts = json!({ "rows": result.rows.len(), "errors": result.error_count() });
    match format {
        Format::Csv => {
            write_atomic(out, &csv_bytes(&prov, |w| write_results_csv(w, &result))?)?;
            write_atomic(&sibling(out, "summary.json"), to_json_text(&summary).as_bytes())?;
            if !result.curves.is_empty() {
                write_atomic(&sibling(out, "curves.csv"), &csv_bytes(&prov, |w| write_curves_csv(w, &result.curves))?)?;
            }
            Ok(None)
        }
        Format::Json => {
            let doc = json!({
                "provenance": prov.json(),
                "experiment": result.experiment,
                "rows": result.rows,
                "aggregates": result.aggregates,
                "extras": result.extras,
                "curves": result.curves,
            });
            write_atomic(out, to_json_text(&doc).as_bytes())?;
            Ok(Some(summary_line(&prov, out, counts)))
        }
    }
}
