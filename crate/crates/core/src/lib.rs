//! Bayesian inference for SDE models with one-dimensional Gaussian random
//! effects in a linear drift,
//!
//! ```text
//! dX_i = phi_i b(X_i) dt + sigma(X_i) dW_i,    phi_i ~ N(mu, omega2).
//! ```
//!
//! The random effects integrate out analytically, so `theta = (mu, omega2)`
//! is learned from the per-subject sufficient statistics `(U_i, V_i)` alone.
//! The crate covers simulation ([`sim`]), the marginal likelihood and its
//! derivatives ([`likelihood`]), conjugate / Laplace / Metropolis posteriors
//! ([`posterior`]) and replicated experiments on their large-sample
//! behaviour ([`lab`]).

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod lab;
pub mod likelihood;
pub mod model;
pub mod posterior;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use likelihood::Dataset;
pub use model::{DesignKind, ModelSpec, ParamSpace, Prior, Theta};
pub use rng::SeedTree;
pub use sim::{EffectsCovariance, StatSource, SuffStats};
