//! Gaussian density and reparameterization primitives.
//!
//! Covariance factors are stored unconstrained: a diagonal factor keeps
//! log-standard-deviations, a Cholesky factor keeps its diagonal as logs.
//! Exponentiation happens at evaluation, so any real parameter vector is a
//! valid positive-definite covariance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CovFactor {
    /// diag(e^{ls_1}, …, e^{ls_d}) — covariance diag(e^{2 ls}).
    DiagLogStd(Vec<f64>),
    /// Packed lower-triangular L, row-major, with L_ii stored as log L_ii;
    /// covariance LLᵀ.
    CholLogDiag { dim: usize, packed: Vec<f64> },
}

impl CovFactor {
    pub fn dim(&self) -> usize {
        match self {
            CovFactor::DiagLogStd(ls) => ls.len(),
            CovFactor::CholLogDiag { dim, .. } => *dim,
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            CovFactor::DiagLogStd(ls) => ls.len(),
            CovFactor::CholLogDiag { packed, .. } => packed.len(),
        }
    }

    /// Dense d×d factor L (diagonal exponentiated).
    pub fn dense(&self) -> Vec<f64> {
        let d = self.dim();
        let mut l = vec![0.0; d * d];
        match self {
            CovFactor::DiagLogStd(ls) => {
                for i in 0..d {
                    l[i * d + i] = ls[i].exp();
                }
            }
            CovFactor::CholLogDiag { packed, .. } => {
                for i in 0..d {
                    let row = i * (i + 1) / 2;
                    for j in 0..i {
                        l[i * d + j] = packed[row + j];
                    }
                    l[i * d + i] = packed[row + i].exp();
                }
            }
        }
        l
    }

    /// Dense covariance LLᵀ.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim();
        let l = self.dense();
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += l[i * d + k] * l[j * d + k];
                }
                c[i * d + j] = acc;
            }
        }
        c
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub factor: CovFactor,
}

impl GaussianParams {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self) -> Result<()> {
        if self.factor.dim() != self.mean.len() {
            return Err(Error::dim(
                "gaussian factor vs mean",
                self.mean.len(),
                self.factor.dim(),
            ));
        }
        Ok(())
    }
}

/// log N(x; mean, diag(e^{2 ls})) without allocation.
pub fn logpdf_diag(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    let d = x.len();
    let mut out = -0.5 * d as f64 * LN_2PI;
    for i in 0..d {
        let r = (x[i] - mean[i]) * (-log_std[i]).exp();
        out -= log_std[i] + 0.5 * r * r;
    }
    out
}

/// log N(x; mean, LLᵀ) for a packed log-diagonal Cholesky factor.
pub fn logpdf_chol(x: &[f64], mean: &[f64], packed: &[f64], scratch: &mut Vec<f64>) -> f64 {
    let d = x.len();
    scratch.clear();
    scratch.resize(d, 0.0);
    let mut out = -0.5 * d as f64 * LN_2PI;
    // forward solve L w = (x - mean), diagonal stored as log
    for i in 0..d {
        let row = i * (i + 1) / 2;
        let mut acc = x[i] - mean[i];
        for j in 0..i {
            acc -= packed[row + j] * scratch[j];
        }
        let w = acc * (-packed[row + i]).exp();
        scratch[i] = w;
        out -= packed[row + i] + 0.5 * w * w;
    }
    out
}

/// Exact log-density of a Gaussian with unconstrained factor storage.
pub fn gaussian_logpdf(x: &[f64], params: &GaussianParams) -> Result<f64> {
    params.check()?;
    if x.len() != params.dim() {
        return Err(Error::dim("gaussian_logpdf input", params.dim(), x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) || params.mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("gaussian_logpdf inputs"));
    }
    Ok(match &params.factor {
        CovFactor::DiagLogStd(ls) => {
            if ls.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite("gaussian_logpdf factor"));
            }
            logpdf_diag(x, &params.mean, ls)
        }
        CovFactor::CholLogDiag { packed, .. } => {
            if packed.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite("gaussian_logpdf factor"));
            }
            let mut scratch = Vec::new();
            logpdf_chol(x, &params.mean, packed, &mut scratch)
        }
    })
}

/// mean + L·noise. Identity in `noise = 0`.
pub fn reparam_sample(params: &GaussianParams, noise: &[f64]) -> Result<Vec<f64>> {
    params.check()?;
    if noise.len() != params.dim() {
        return Err(Error::dim("reparam noise", params.dim(), noise.len()));
    }
    let d = params.dim();
    let mut z = params.mean.clone();
    match &params.factor {
        CovFactor::DiagLogStd(ls) => {
            for i in 0..d {
                z[i] += ls[i].exp() * noise[i];
            }
        }
        CovFactor::CholLogDiag { packed, .. } => {
            for i in 0..d {
                let row = i * (i + 1) / 2;
                for j in 0..i {
                    z[i] += packed[row + j] * noise[j];
                }
                z[i] += packed[row + i].exp() * noise[i];
            }
        }
    }
    Ok(z)
}
