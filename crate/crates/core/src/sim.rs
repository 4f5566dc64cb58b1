//! Random effects, Euler–Maruyama paths and sufficient statistics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::likelihood::Dataset;
use crate::model::{Design, ModelSpec, Theta};
use crate::rng::SeedTree;

/// A simulated path on a uniform grid, with the Wiener increments that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `dw[k] = W(t_{k+1}) - W(t_k)`.
    pub dw: Vec<f64>,
    pub x0: f64,
    pub phi: f64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.dw.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one point")
    }

    /// `W(T)`.
    pub fn wiener_end(&self) -> f64 {
        self.dw.iter().sum()
    }

    /// Observe the same path on a coarser grid of `m` steps.
    ///
    /// `m` must divide the current step count; Wiener increments are summed
    /// over each coarse interval.
    pub fn coarsen(&self, m: usize) -> Result<Trajectory> {
        let fine = self.steps();
        if m == 0 || !fine.is_multiple_of(m) {
            return Err(invalid(
                "m",
                format!("coarse step count {m} must divide the fine step count {fine}"),
            ));
        }
        let stride = fine / m;
        let times = self.times.iter().step_by(stride).copied().collect();
        let values = self.values.iter().step_by(stride).copied().collect();
        let dw = self.dw.chunks(stride).map(|c| c.iter().sum()).collect();
        Ok(Trajectory {
            times,
            values,
            dw,
            x0: self.x0,
            phi: self.phi,
        })
    }
}

/// Whether a statistic was formed from the continuous path or a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatMode {
    Exact,
    Discretized(usize),
}

/// Per-subject sufficient statistics `(U, V)` with their design metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuffStats {
    pub u: f64,
    pub v: f64,
    pub horizon: f64,
    pub x0: f64,
    pub mode: StatMode,
}

impl SuffStats {
    /// Bare `(U, V)` pair, e.g. for likelihood evaluation in isolation.
    pub fn from_uv(u: f64, v: f64) -> Self {
        Self {
            u,
            v,
            horizon: v.max(f64::MIN_POSITIVE),
            x0: 0.0,
            mode: StatMode::Exact,
        }
    }
}

/// Correlation structure of the random-effects vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EffectsCovariance {
    Iid,
    /// Unit diagonal, `rho` on the first off-diagonals.
    Tridiagonal(f64),
    /// Unit diagonal, `rho` everywhere else.
    CompoundSymmetry(f64),
}

impl EffectsCovariance {
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        match *self {
            EffectsCovariance::Iid => DMatrix::identity(n, n),
            EffectsCovariance::Tridiagonal(rho) => DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    1.0
                } else if i.abs_diff(j) == 1 {
                    rho
                } else {
                    0.0
                }
            }),
            EffectsCovariance::CompoundSymmetry(rho) => {
                DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho })
            }
        }
    }

    pub fn cholesky(&self, n: usize) -> Result<DMatrix<f64>> {
        if n < 1 {
            return Err(invalid("n", "need at least one subject"));
        }
        nalgebra::Cholesky::new(self.matrix(n))
            .map(|c| c.l())
            .ok_or_else(|| Error::NotPositiveDefinite(format!("{self:?} with n = {n}")))
    }

    pub fn label(&self) -> &'static str {
        match self {
            EffectsCovariance::Iid => "iid",
            EffectsCovariance::Tridiagonal(_) => "tridiagonal",
            EffectsCovariance::CompoundSymmetry(_) => "compound",
        }
    }
}

/// `n` iid draws from `N(mu, omega2)`.
pub fn sample_effects_iid<R: Rng + ?Sized>(n: usize, theta: &Theta, rng: &mut R) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(invalid("n", "need at least one subject"));
    }
    let sd = theta.omega2.sqrt();
    Ok((0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            theta.mu + sd * z
        })
        .collect())
}

/// One draw of `phi ~ N_n(mu 1, omega2 Sigma)` given the Cholesky factor of `Sigma`.
pub fn sample_effects_with_factor<R: Rng + ?Sized>(
    mu: f64,
    omega2: f64,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> Vec<f64> {
    let n = factor.nrows();
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let sd = omega2.sqrt();
    let correlated = factor * z;
    correlated.iter().map(|c| mu + sd * c).collect()
}

/// One draw of `phi ~ N_n(mu 1, omega2 Sigma)`.
pub fn sample_effects_dependent<R: Rng + ?Sized>(
    n: usize,
    mu: f64,
    omega2: f64,
    cov: &EffectsCovariance,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(omega2 > 0.0) {
        return Err(invalid("omega2", format!("must be positive, got {omega2}")));
    }
    let factor = cov.cholesky(n)?;
    Ok(sample_effects_with_factor(mu, omega2, &factor, rng))
}

fn check_grid(horizon: f64, m: usize) -> Result<()> {
    if m < 1 {
        return Err(invalid("m", "need at least one step"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("T", format!("horizon must be positive, got {horizon}")));
    }
    Ok(())
}

/// Euler–Maruyama driven by caller-supplied standard normal innovations.
///
/// One step is taken per element of `z`; `z_k` is scaled by `sqrt(h)` to give
/// the Wiener increment.
pub fn simulate_path_with_noise(
    model: &ModelSpec,
    phi: f64,
    x0: f64,
    horizon: f64,
    z: &[f64],
) -> Result<Trajectory> {
    let m = z.len();
    check_grid(horizon, m)?;
    let h = horizon / m as f64;
    let sqrt_h = h.sqrt();
    let mut times = Vec::with_capacity(m + 1);
    let mut values = Vec::with_capacity(m + 1);
    let mut dw = Vec::with_capacity(m);
    times.push(0.0);
    values.push(x0);
    let mut x = x0;
    for (k, &zk) in z.iter().enumerate() {
        let s = model.sigma(x);
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::ZeroDiffusion { index: k, value: s });
        }
        let inc = sqrt_h * zk;
        x += phi * model.b(x) * h + s * inc;
        if !x.is_finite() {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
        dw.push(inc);
        values.push(x);
        // the last grid point is pinned to the horizon exactly
        times.push(if k + 1 == m { horizon } else { (k + 1) as f64 * h });
    }
    Ok(Trajectory {
        times,
        values,
        dw,
        x0,
        phi,
    })
}

/// Euler–Maruyama path with `m` uniform steps over `[0, T]`.
pub fn simulate_path<R: Rng + ?Sized>(
    model: &ModelSpec,
    phi: f64,
    x0: f64,
    horizon: f64,
    m: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    check_grid(horizon, m)?;
    let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    simulate_path_with_noise(model, phi, x0, horizon, &z)
}

/// Closed-form statistics of the unit model: `U = phi T + W(T)`, `V = T`.
pub fn suff_stats_exact_unit(phi: f64, horizon: f64, w_end: f64) -> Result<SuffStats> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("T", format!("horizon must be positive, got {horizon}")));
    }
    Ok(SuffStats {
        u: phi * horizon + w_end,
        v: horizon,
        horizon,
        x0: 0.0,
        mode: StatMode::Exact,
    })
}

/// Left-endpoint (Itô) sums
///
/// ```text
/// U^m = sum_k b(X_k)/sigma^2(X_k) (X_{k+1} - X_k)
/// V^m = sum_k b^2(X_k)/sigma^2(X_k) (t_{k+1} - t_k)
/// ```
///
/// Consecutive terms sharing the same weight are summed as a single telescoped
/// difference, which is the same sum in exact arithmetic and makes the unit
/// model return `X(T) - X(0)` and `T` without rounding.
pub fn suff_stats_discretized(traj: &Trajectory, model: &ModelSpec) -> Result<SuffStats> {
    let m = traj.steps();
    if m < 1 || traj.values.len() != m + 1 || traj.times.len() != m + 1 {
        return Err(invalid("trajectory", "need m >= 1 steps with m + 1 grid points"));
    }
    let mut u = 0.0;
    let mut v = 0.0;
    let mut run_start = 0usize;
    let mut run_weights = (f64::NAN, f64::NAN);
    let flush = |start: usize, end: usize, w: (f64, f64), u: &mut f64, v: &mut f64| {
        if end > start {
            *u += w.0 * (traj.values[end] - traj.values[start]);
            *v += w.1 * (traj.times[end] - traj.times[start]);
        }
    };
    for k in 0..m {
        let x = traj.values[k];
        let s = model.sigma(x);
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::ZeroDiffusion { index: k, value: s });
        }
        let b = model.b(x);
        let s2 = s * s;
        let w = (b / s2, b * b / s2);
        if w != run_weights {
            flush(run_start, k, run_weights, &mut u, &mut v);
            run_start = k;
            run_weights = w;
        }
    }
    flush(run_start, m, run_weights, &mut u, &mut v);
    Ok(SuffStats {
        u,
        v,
        horizon: traj.horizon(),
        x0: traj.x0,
        mode: StatMode::Discretized(m),
    })
}

/// Where per-subject statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatSource {
    /// Closed form, unit model only.
    Exact,
    /// Euler–Maruyama path with `steps` steps, then the discretized sums.
    Path { steps: usize },
}

/// Statistics of one subject given its realized random effect.
///
/// Consumes only `rng`, so callers can key one stream per subject.
pub fn simulate_subject<R: Rng + ?Sized>(
    model: &ModelSpec,
    phi: f64,
    x0: f64,
    horizon: f64,
    source: StatSource,
    rng: &mut R,
) -> Result<SuffStats> {
    match source {
        StatSource::Exact => {
            if !model.is_unit() {
                return Err(invalid(
                    "mode",
                    format!("exact statistics are only available for the unit model, not `{}`", model.label),
                ));
            }
            let z: f64 = rng.sample(StandardNormal);
            let mut s = suff_stats_exact_unit(phi, horizon, horizon.sqrt() * z)?;
            s.x0 = x0;
            Ok(s)
        }
        StatSource::Path { steps } => {
            let traj = simulate_path(model, phi, x0, horizon, steps, rng)?;
            suff_stats_discretized(&traj, model)
        }
    }
}

/// Simulate a dataset for given random effects; subject `i` draws from stream `key ++ [i]`.
pub fn simulate_dataset_with_effects(
    model: &ModelSpec,
    phi: &[f64],
    design: &Design,
    source: StatSource,
    tree: &SeedTree,
    key: &[u64],
) -> Result<Dataset> {
    if phi.len() != design.len() {
        return Err(invalid("phi", format!("{} effects for {} subjects", phi.len(), design.len())));
    }
    let mut sub_key = key.to_vec();
    sub_key.push(0);
    let stats = phi
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            *sub_key.last_mut().expect("non-empty key") = i as u64;
            let mut rng = tree.stream(&sub_key);
            simulate_subject(model, p, design.x0[i], design.horizons[i], source, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(stats)
}

/// Simulate a dataset with iid random effects drawn from `theta`.
///
/// The effects come from stream `key ++ [EFFECTS_STREAM]`, subjects from
/// `key ++ [i]`.
pub fn simulate_dataset(
    model: &ModelSpec,
    theta: &Theta,
    design: &Design,
    source: StatSource,
    tree: &SeedTree,
    key: &[u64],
) -> Result<Dataset> {
    let mut effects_key = key.to_vec();
    effects_key.push(EFFECTS_STREAM);
    let phi = sample_effects_iid(design.len(), theta, &mut tree.stream(&effects_key))?;
    simulate_dataset_with_effects(model, &phi, design, source, tree, key)
}

/// Stream index reserved for the random-effects vector of a dataset.
pub const EFFECTS_STREAM: u64 = u64::MAX;
