//! Naive nested Monte-Carlo gradient estimation and stock first-order
//! optimizers, used as comparison baselines.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::composition::{oracle_g, sample_outer_indices, Cols, CompositionalProblem, GBatch};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineOpt {
    Adam,
    RmsProp,
    Sgd,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant(f64),
    /// η_t = c / t^a.
    PolyDecay {
        c: f64,
        exponent: f64,
    },
}

impl LrSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            LrSchedule::Constant(c) => c,
            LrSchedule::PolyDecay { c, exponent } => c / (t as f64).powf(exponent),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NmcConfig {
    /// Outer sample count N.
    pub outer: usize,
    /// Inner sample count M.
    pub inner: usize,
    pub optimizer: BaselineOpt,
    pub lr: LrSchedule,
}

/// Plug-in nested Monte-Carlo estimate of the log-form objective and its
/// pathwise gradient: loss = (1/N)Σᵢ log ĝ_{νᵢ} with ĝ the M-draw inner
/// mean; the gradient differentiates through that mean, so it carries the
/// O(1/M) plug-in bias (documented, not corrected).
pub fn nmc_loss_grad(
    problem: &CompositionalProblem,
    theta: &[f64],
    cfg: &NmcConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>)> {
    if cfg.outer == 0 || cfg.inner == 0 {
        return Err(Error::Config("NMC needs N, M >= 1".into()));
    }
    let n = problem.pool_size();
    let indices = sample_outer_indices(0, n, cfg.outer, rng);
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &i in &indices {
        match counts.binary_search_by_key(&i, |p| p.0) {
            Ok(pos) => counts[pos].1 += 1,
            Err(pos) => counts.insert(pos, (i, 1)),
        }
    }
    let cols: Vec<usize> = counts.iter().map(|&(c, _)| c).collect();
    let batch = oracle_g(problem, theta, cfg.inner, Cols::Subset(cols), rng)?;

    let mut loss = 0.0;
    let mut coeffs = Vec::with_capacity(counts.len());
    for &(col, cnt) in &counts {
        let lg = batch.log_mean_at(col);
        loss += cnt as f64 * lg;
        coeffs.push((col, cnt as f64 / cfg.outer as f64));
    }
    loss /= cfg.outer as f64;
    let grad = batch.contract_log_mean(&coeffs)?;
    Ok((loss, grad))
}

/// The reciprocal-form value estimator (1/N)Σᵢ 1/ĝ_{νᵢ} for the nested
/// inverse expectation; value only, never used as a gradient.
pub fn nmc_reciprocal_estimate(batch: &GBatch, indices: &[usize]) -> f64 {
    let s: f64 = indices.iter().map(|&i| (-batch.log_mean_at(i)).exp()).sum();
    s / indices.len() as f64
}

/// State for the stock optimizers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: usize,
}

impl BaselineState {
    pub fn new(p: usize) -> Self {
        BaselineState {
            m: vec![0.0; p],
            v: vec![0.0; p],
            t: 0,
        }
    }
}

fn check_grad(grad: &[f64]) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::non_finite("baseline gradient"));
    }
    Ok(())
}

/// Textbook ADAM with bias correction (β₁ = 0.9, β₂ = 0.999).
pub fn step_adam(
    state: &mut BaselineState,
    theta: &mut [f64],
    grad: &[f64],
    eta: f64,
    xi: f64,
) -> Result<()> {
    check_grad(grad)?;
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - B1.powi(t);
    let c2 = 1.0 - B2.powi(t);
    for i in 0..theta.len() {
        state.m[i] = B1 * state.m[i] + (1.0 - B1) * grad[i];
        state.v[i] = B2 * state.v[i] + (1.0 - B2) * grad[i] * grad[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        theta[i] -= eta * m_hat / (v_hat.sqrt() + xi);
    }
    Ok(())
}

/// RMSProp without momentum (ρ = 0.9).
pub fn step_rmsprop(
    state: &mut BaselineState,
    theta: &mut [f64],
    grad: &[f64],
    eta: f64,
    xi: f64,
) -> Result<()> {
    check_grad(grad)?;
    const RHO: f64 = 0.9;
    state.t += 1;
    for i in 0..theta.len() {
        state.v[i] = RHO * state.v[i] + (1.0 - RHO) * grad[i] * grad[i];
        theta[i] -= eta * grad[i] / (state.v[i].sqrt() + xi);
    }
    Ok(())
}

/// Plain SGD.
pub fn step_sgd(
    state: &mut BaselineState,
    theta: &mut [f64],
    grad: &[f64],
    eta: f64,
) -> Result<()> {
    check_grad(grad)?;
    state.t += 1;
    for i in 0..theta.len() {
        theta[i] -= eta * grad[i];
    }
    Ok(())
}
