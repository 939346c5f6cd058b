//! Target log-densities for the toy and regression experiments.
//!
//! All three toy targets are normalized 2-d densities. The banana target is
//! the pushforward of a correlated Gaussian under a unit-Jacobian shear, so
//! its density is evaluated by the inverse transform.

use std::sync::Arc;

use crate::diffcore::gaussian::{logpdf_chol, logpdf_diag};
use crate::diffcore::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::sivi::blr::BlrDataset;

pub const LN_HALF: f64 = -std::f64::consts::LN_2;

/// A target supplied as a callback must also know how to record itself so
/// the ratio gradients can flow through it.
pub trait CustomTarget: Send + Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, z: &[f64]) -> f64;
    fn emit(&self, tape: &mut Tape, z: Var) -> Var;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    TwoModal,
    Star,
    Banana,
}

#[derive(Clone)]
pub enum TargetDensity {
    TwoModal,
    Star,
    Banana,
    Blr(Arc<BlrDataset>),
    Custom(Arc<dyn CustomTarget>),
}

impl std::fmt::Debug for TargetDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetDensity::TwoModal => write!(f, "TwoModal"),
            TargetDensity::Star => write!(f, "Star"),
            TargetDensity::Banana => write!(f, "Banana"),
            TargetDensity::Blr(ds) => write!(f, "Blr(n={}, d={})", ds.n_rows(), ds.dim()),
            TargetDensity::Custom(c) => write!(f, "Custom(dim={})", c.dim()),
        }
    }
}

// Cholesky of a 2x2 SPD matrix [[a, b], [b, d]], packed with log-diagonal.
fn chol2_packed(a: f64, b: f64, d: f64) -> [f64; 3] {
    let l11 = a.sqrt();
    let l21 = b / l11;
    let l22 = (d - l21 * l21).sqrt();
    [l11.ln(), l21, l22.ln()]
}

fn star_factors() -> ([f64; 3], [f64; 3]) {
    (chol2_packed(2.0, 1.8, 2.0), chol2_packed(2.0, -1.8, 2.0))
}

fn banana_factor() -> [f64; 3] {
    chol2_packed(1.0, 0.9, 1.0)
}

fn logsumexp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Exact log-density of one of the three toy targets at a 2-d point.
pub fn toy_log_density(kind: ToyKind, z: &[f64]) -> Result<f64> {
    if z.len() != 2 {
        return Err(Error::dim("toy target input", 2, z.len()));
    }
    Ok(match kind {
        ToyKind::TwoModal => {
            let a = logpdf_diag(z, &[-2.0, 0.0], &[0.0, 0.0]);
            let b = logpdf_diag(z, &[2.0, 0.0], &[0.0, 0.0]);
            logsumexp2(LN_HALF + a, LN_HALF + b)
        }
        ToyKind::Star => {
            let (p1, p2) = star_factors();
            let mut scratch = Vec::new();
            let a = logpdf_chol(z, &[0.0, 0.0], &p1, &mut scratch);
            let b = logpdf_chol(z, &[0.0, 0.0], &p2, &mut scratch);
            logsumexp2(LN_HALF + a, LN_HALF + b)
        }
        ToyKind::Banana => {
            // inverse shear, |det J| = 1
            let g = [z[0], z[1] + z[0] * z[0] + 1.0];
            let mut scratch = Vec::new();
            logpdf_chol(&g, &[0.0, 0.0], &banana_factor(), &mut scratch)
        }
    })
}

impl TargetDensity {
    pub fn toy(kind: ToyKind) -> Self {
        match kind {
            ToyKind::TwoModal => TargetDensity::TwoModal,
            ToyKind::Star => TargetDensity::Star,
            ToyKind::Banana => TargetDensity::Banana,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetDensity::TwoModal | TargetDensity::Star | TargetDensity::Banana => 2,
            TargetDensity::Blr(ds) => ds.dim(),
            TargetDensity::Custom(c) => c.dim(),
        }
    }

    pub fn log_density(&self, z: &[f64]) -> Result<f64> {
        match self {
            TargetDensity::TwoModal => toy_log_density(ToyKind::TwoModal, z),
            TargetDensity::Star => toy_log_density(ToyKind::Star, z),
            TargetDensity::Banana => toy_log_density(ToyKind::Banana, z),
            TargetDensity::Blr(ds) => Ok(ds.log_joint(z)),
            TargetDensity::Custom(c) => Ok(c.log_density(z)),
        }
    }

    /// Record the log-density of `z` on a tape.
    pub fn emit(&self, tape: &mut Tape, z: Var) -> Var {
        match self {
            TargetDensity::TwoModal => {
                let m1 = tape.constv(&[-2.0, 0.0]);
                let m2 = tape.constv(&[2.0, 0.0]);
                let ls = tape.constv(&[0.0, 0.0]);
                let a = tape.gauss_logpdf_diag(z, m1, ls);
                let b = tape.gauss_logpdf_diag(z, m2, ls);
                let a = tape.shift(a, LN_HALF);
                let b = tape.shift(b, LN_HALF);
                let s = tape.stack(&[a, b]);
                tape.logsumexp(s)
            }
            TargetDensity::Star => {
                let (p1, p2) = star_factors();
                let zero = tape.constv(&[0.0, 0.0]);
                let f1 = tape.constv(&p1);
                let f2 = tape.constv(&p2);
                let a = tape.gauss_logpdf_chol(z, zero, f1);
                let b = tape.gauss_logpdf_chol(z, zero, f2);
                let a = tape.shift(a, LN_HALF);
                let b = tape.shift(b, LN_HALF);
                let s = tape.stack(&[a, b]);
                tape.logsumexp(s)
            }
            TargetDensity::Banana => {
                let z1 = tape.slice(z, 0, 1);
                let z2 = tape.slice(z, 1, 1);
                let sq = tape.mul(z1, z1);
                let t = tape.add(z2, sq);
                let t = tape.shift(t, 1.0);
                let g = tape.stack(&[z1, t]);
                let zero = tape.constv(&[0.0, 0.0]);
                let f = tape.constv(&banana_factor());
                tape.gauss_logpdf_chol(g, zero, f)
            }
            TargetDensity::Blr(ds) => ds.emit_log_joint(tape, z),
            TargetDensity::Custom(c) => c.emit(tape, z),
        }
    }
}
