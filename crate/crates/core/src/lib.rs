//! Compositional solver for semi-implicit variational inference.
//!
//! The crate decomposes a semi-implicit ELBO into a nested expectation
//! E_ν[f_ν(E_ε̂[g_ε̂(θ)])] over a fixed sample pool, then minimizes it with an
//! ADAM-style optimizer whose auxiliary extrapolation-smoothing step tracks
//! the inner expectation and whose Jacobian-vector products are estimated by
//! randomized column sketching. Density ratios, their running averages, and
//! the sparse outer-gradient weights are all carried in log-domain.
//!
//! Module map:
//! - [`diffcore`]: reverse-mode tape, MLPs, Gaussian primitives
//! - [`composition`]: decoupled inner/outer oracles over a sample pool
//! - [`sivi`]: semi-implicit models, toy targets, Bayesian logistic regression
//! - [`solver`]: schedules, primary/auxiliary updates, the run loop
//! - [`sketch`]: randomized column-sketched gradient estimators
//! - [`baselines`]: nested Monte-Carlo estimator and stock optimizers

pub mod baselines;
pub mod composition;
pub mod diffcore;
pub mod error;
pub mod fixtures;
pub mod rng;
pub mod sivi;
pub mod sketch;
pub mod solver;

pub use error::{Error, Result};
