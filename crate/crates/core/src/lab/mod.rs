//! Replicated experiments on the large-sample behaviour of the posterior.
//!
//! Each runner sweeps a grid of sample sizes (or discretization levels) and
//! replicates, computes a fixed list of metrics per cell and returns them as
//! long-format rows. Work units run in parallel on disjoint random streams;
//! rows come back sorted by `(n_or_m, replicate)` whatever the scheduling.
//! A failing replicate yields `NaN` rows with `error_flag` set instead of
//! aborting the sweep.

mod config;
mod runners;

pub use config::{
    fingerprint, DependenceConfig, DesignConfig, DesignLabel, DiscretizationConfig, ExperimentConfig, ExperimentKind, McmcConfig,
    NormalityConfig, OptimizerConfig, PriorConfig, PriorLabel, SourceConfig,
};
pub use runners::{
    run_consistency, run_dependence, run_discretization, run_experiment, run_intervals, run_lrt, run_normality,
};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: ExperimentKind,
    pub n_or_m: usize,
    pub replicate: usize,
    pub metric: &'static str,
    pub value: f64,
    pub error_flag: bool,
}

/// Per-cell statistics of one metric over the non-error replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub n_or_m: usize,
    pub metric: &'static str,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub ok: usize,
    pub errors: usize,
}

/// A runner-specific summary number, optionally tied to one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryValue {
    pub n_or_m: Option<usize>,
    pub name: &'static str,
    pub value: f64,
}

/// A density evaluated on a grid, for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub label: &'static str,
    pub n: usize,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<Aggregate>,
    pub extras: Vec<SummaryValue>,
    pub curves: Vec<Curve>,
}

impl ExperimentResult {
    fn new(config: &ExperimentConfig, rows: Vec<ResultRow>) -> Self {
        let aggregates = aggregate(&rows);
        Self {
            experiment: config.experiment,
            config_hash: config.fingerprint_hex(),
            seed: config.seed,
            rows,
            aggregates,
            extras: Vec::new(),
            curves: Vec::new(),
        }
    }

    /// Values of `metric` at `n_or_m`, in replicate order, `NaN` for failed replicates.
    pub fn values(&self, n_or_m: usize, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.n_or_m == n_or_m && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn aggregate(&self, n_or_m: usize, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.n_or_m == n_or_m && a.metric == metric)
    }

    pub fn extra(&self, n_or_m: Option<usize>, name: &str) -> Option<f64> {
        self.extras.iter().find(|e| e.n_or_m == n_or_m && e.name == name).map(|e| e.value)
    }

    pub fn error_count(&self) -> usize {
        self.rows.iter().filter(|r| r.error_flag).count()
    }
}

fn aggregate(rows: &[ResultRow]) -> Vec<Aggregate> {
    let mut out: Vec<Aggregate> = Vec::new();
    let mut i = 0;
    // rows are grouped by cell, metrics in a fixed order within each replicate
    while i < rows.len() {
        let n = rows[i].n_or_m;
        let end = rows[i..].iter().position(|r| r.n_or_m != n).map_or(rows.len(), |p| i + p);
        let cell = &rows[i..end];
        let mut metrics: Vec<&'static str> = Vec::new();
        for r in cell {
            if !metrics.contains(&r.metric) {
                metrics.push(r.metric);
            }
        }
        for metric in metrics {
            let (ok, bad): (Vec<&ResultRow>, Vec<&ResultRow>) =
                cell.iter().filter(|r| r.metric == metric).partition(|r| !r.error_flag);
            let values: Vec<f64> = ok.iter().map(|r| r.value).collect();
            let (mean, median, sd) = if values.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else if values.len() == 1 {
                (values[0], values[0], 0.0)
            } else {
                (stats::mean(&values), stats::median(&values), stats::variance(&values).sqrt())
            };
            out.push(Aggregate { n_or_m: n, metric, mean, median, sd, ok: values.len(), errors: bad.len() });
        }
        i = end;
    }
    out
}

/// Append one replicate's rows, or `NaN` rows flagged as errors.
fn push_rows(
    rows: &mut Vec<ResultRow>,
    experiment: ExperimentKind,
    n_or_m: usize,
    replicate: usize,
    metrics: &[&'static str],
    outcome: std::result::Result<&[f64], &crate::Error>,
) {
    if let Err(e) = outcome {
        log::warn!("{} n_or_m={n_or_m} replicate={replicate}: {e}", experiment.label());
    }
    for (k, &metric) in metrics.iter().enumerate() {
        let (value, error_flag) = match outcome {
            Ok(values) => (values[k], false),
            Err(_) => (f64::NAN, true),
        };
        rows.push(ResultRow { experiment, n_or_m, replicate, metric, value, error_flag });
    }
}

/// Evaluate `cell(n, replicate)` over the full grid in parallel.
fn sweep<F>(config: &ExperimentConfig, grid: &[usize], metrics: &[&'static str], cell: F) -> Vec<ResultRow>
where
    F: Fn(usize, usize) -> Result<Vec<f64>> + Sync,
{
    let units: Vec<(usize, usize)> =
        grid.iter().flat_map(|&n| (0..config.replicates).map(move |r| (n, r))).collect();
    let outcomes: Vec<Result<Vec<f64>>> = units.par_iter().map(|&(n, r)| cell(n, r)).collect();
    let mut rows = Vec::with_capacity(units.len() * metrics.len());
    for (&(n, r), outcome) in units.iter().zip(&outcomes) {
        debug_assert!(outcome.as_ref().map_or(true, |v| v.len() == metrics.len()));
        push_rows(&mut rows, config.experiment, n, r, metrics, outcome.as_ref().map(|v| v.as_slice()));
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::invalid;

    #[test]
    fn failures_become_flagged_rows() {
        let mut config = ExperimentConfig::new(ExperimentKind::Consistency);
        config.replicates = 3;
        let rows = sweep(&config, &[5, 7], &["a", "b"], |n, r| {
            if n == 7 && r == 1 {
                Err(invalid("x", "boom"))
            } else {
                Ok(vec![n as f64, r as f64])
            }
        });
        assert_eq!(rows.len(), 2 * 3 * 2);
        let flagged: Vec<_> = rows.iter().filter(|r| r.error_flag).collect();
        assert_eq!(flagged.len(), 2);
        assert!(flagged.iter().all(|r| r.value.is_nan() && r.n_or_m == 7 && r.replicate == 1));
        let agg = aggregate(&rows);
        let a = agg.iter().find(|a| a.n_or_m == 7 && a.metric == "b").unwrap();
        assert_eq!((a.ok, a.errors), (2, 1));
        assert_eq!(a.mean, 1.0);
        // sorted by (n, replicate)
        let keys: Vec<_> = rows.iter().map(|r| (r.n_or_m, r.replicate)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
