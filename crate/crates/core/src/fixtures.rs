//! Synthetic inner maps with closed-form expectations, used by the
//! bias-rate study, baseline comparisons, and tests.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::composition::{CompositionalProblem, Draw, InnerG, WeightedTerm};
use crate::error::Result;

/// Linear-lognormal inner map: log g_ε̂(θ) = Aθ + b + ε̂ with ε̂ ~ N(0, σ²Iₙ),
/// so E[g](θ) = exp(Aθ + b + σ²/2) componentwise and the plug-in loss and
/// gradient are available in closed form.
#[derive(Debug, Clone)]
pub struct Lognormal {
    /// Row-major n×p.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
}

impl Lognormal {
    pub fn new(a: Vec<f64>, b: Vec<f64>, n: usize, p: usize, sigma: f64) -> Self {
        assert_eq!(a.len(), n * p);
        assert_eq!(b.len(), n);
        Lognormal { a, b, n, p, sigma }
    }

    /// Random instance with entries scaled to keep the ratios tame.
    pub fn random(n: usize, p: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (p as f64).sqrt();
        let a = (0..n * p)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let b = (0..n)
            .map(|_| 0.25 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Lognormal::new(a, b, n, p, sigma)
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.a[k * self.p..(k + 1) * self.p]
    }

    /// log E[g]_k = (Aθ + b)_k + σ²/2.
    pub fn exact_log_mean(&self, theta: &[f64], k: usize) -> f64 {
        let lin: f64 = self.row(k).iter().zip(theta).map(|(&a, &t)| a * t).sum();
        lin + self.b[k] + 0.5 * self.sigma * self.sigma
    }

    /// L(θ) = (1/n) Σ_ν log E[g]_ν.
    pub fn exact_loss(&self, theta: &[f64]) -> f64 {
        (0..self.n)
            .map(|k| self.exact_log_mean(theta, k))
            .sum::<f64>()
            / self.n as f64
    }

    /// ∇L — the column mean of A (constant in θ).
    pub fn exact_gradient(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.p];
        for k in 0..self.n {
            for (gi, &ai) in g.iter_mut().zip(self.row(k)) {
                *gi += ai / self.n as f64;
            }
        }
        g
    }

    pub fn into_problem(self) -> CompositionalProblem {
        CompositionalProblem::new(Arc::new(self))
    }
}

impl InnerG for Lognormal {
    fn pool_size(&self) -> usize {
        self.n
    }

    fn param_dim(&self) -> usize {
        self.p
    }

    fn sample_draw(&self, rng: &mut ChaCha8Rng) -> Draw {
        (0..self.n)
            .map(|_| self.sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn log_g(&self, theta: &[f64], draw: &Draw, cols: &[usize], out: &mut [f64]) -> Result<()> {
        for (slot, &k) in cols.iter().enumerate() {
            let lin: f64 = self.row(k).iter().zip(theta).map(|(&a, &t)| a * t).sum();
            out[slot] = lin + self.b[k] + draw[k];
        }
        Ok(())
    }

    fn grad_log_g_col(&self, _theta: &[f64], _draw: &Draw, col: usize) -> Result<Vec<f64>> {
        Ok(self.row(col).to_vec())
    }

    fn grad_weighted(
        &self,
        _theta: &[f64],
        _draws: &[Draw],
        terms: &[WeightedTerm],
    ) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.p];
        for t in terms {
            for (gi, &ai) in grad.iter_mut().zip(self.row(t.col)) {
                *gi += t.weight * ai;
            }
        }
        Ok(grad)
    }
}

type LogGFn = dyn Fn(&[f64], usize) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], usize) -> Vec<f64> + Send + Sync;

/// Deterministic inner map from closures: the draw is ignored, so every
/// oracle call returns identical values. Gradients are supplied analytically.
pub struct DeterministicG {
    pub n: usize,
    pub p: usize,
    log_g_fn: Arc<LogGFn>,
    grad_fn: Arc<GradFn>,
}

impl DeterministicG {
    pub fn new(
        n: usize,
        p: usize,
        log_g_fn: impl Fn(&[f64], usize) -> f64 + Send + Sync + 'static,
        grad_fn: impl Fn(&[f64], usize) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        DeterministicG {
            n,
            p,
            log_g_fn: Arc::new(log_g_fn),
            grad_fn: Arc::new(grad_fn),
        }
    }

    pub fn into_problem(self) -> CompositionalProblem {
        CompositionalProblem::new(Arc::new(self))
    }
}

impl InnerG for DeterministicG {
    fn pool_size(&self) -> usize {
        self.n
    }

    fn param_dim(&self) -> usize {
        self.p
    }

    fn sample_draw(&self, _rng: &mut ChaCha8Rng) -> Draw {
        Vec::new()
    }

    fn log_g(&self, theta: &[f64], _draw: &Draw, cols: &[usize], out: &mut [f64]) -> Result<()> {
        for (slot, &k) in cols.iter().enumerate() {
            out[slot] = (self.log_g_fn)(theta, k);
        }
        Ok(())
    }

    fn grad_log_g_col(&self, theta: &[f64], _draw: &Draw, col: usize) -> Result<Vec<f64>> {
        Ok((self.grad_fn)(theta, col))
    }
}
