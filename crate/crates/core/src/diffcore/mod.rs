//! Reverse-mode differentiation engine, small MLPs, and Gaussian primitives.

pub mod gaussian;
pub mod mlp;
pub mod tape;

pub use gaussian::{gaussian_logpdf, reparam_sample, CovFactor, GaussianParams};
pub use mlp::{Activation, InitScheme, MlpSpec};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// Flat vector of all trainable parameters. Length is fixed for a run and
/// every entry stays finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(p: usize) -> Self {
        ParamVector(vec![0.0; p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(context));
        }
        Ok(())
    }
}

impl std::ops::Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Central finite differences of `f` at `x` with step `h` — the independent
/// oracle gradient checks compare against.
pub fn central_finite_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Max relative error between an analytic gradient and its finite-difference
/// counterpart, coordinate-wise, guarded near zero.
pub fn max_rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1.0))
        .fold(0.0, f64::max)
}
