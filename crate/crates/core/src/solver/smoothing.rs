//! Log-domain exponential smoothing with a Taylor overflow branch, and the
//! chunked update bookkeeping.
//!
//! The auxiliary smoothing step y' = (1−β)y + β·ḡ is carried as
//! log y' = log(e^a + e^b) with a = log(1−β)+log y, b = log β + log ḡ.
//! The sum is max-shifted; once the magnitude gap makes e^{−gap} drop below
//! f64 resolution, log1p is replaced by its truncated alternating series
//! with an explicit remainder check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gap (in nats) beyond which the series branch is used. e^{−36} < 2^{−51},
/// so the first-order term is already at the edge of f64 resolution there.
pub const TAYLOR_GAP: f64 = 36.0;

/// Series order N; remainder is O(r^{N+1}).
pub const TAYLOR_ORDER: usize = 8;

/// Truncated series for log(1 + r) with r = e^{−gap}, anchored at the
/// dominant term: hi + Σ_{i=1..N} (−1)^{i−1} rⁱ/i.
pub fn log_add_exp_taylor(hi: f64, gap: f64) -> f64 {
    debug_assert!(gap >= 0.0);
    let r = (-gap).exp();
    let mut term = r;
    let mut series = 0.0;
    for i in 1..=TAYLOR_ORDER {
        series += if i % 2 == 1 {
            term / i as f64
        } else {
            -term / i as f64
        };
        term *= r;
    }
    // remainder bound r^{N+1}/(N+1); in this branch r <= e^{-TAYLOR_GAP}
    debug_assert!(term / (TAYLOR_ORDER as f64 + 1.0) <= f64::EPSILON * (1.0 + series.abs()));
    hi + series
}

/// log(e^a + e^b), max-shifted, switching to the series branch at extreme
/// magnitude gaps. Tolerates −∞ in either argument.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    let gap = hi - lo;
    if gap > TAYLOR_GAP {
        log_add_exp_taylor(hi, gap)
    } else {
        hi + (-gap).exp().ln_1p()
    }
}

/// In-place log-domain smoothing of the active chunk:
/// log y ← log[(1−β)·y + β·ḡ]. β = 1 degenerates to a copy of log ḡ.
pub fn smooth_update_log(log_y: &mut [f64], log_gbar: &[f64], beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!(
            "smoothing beta must lie in (0, 1], got {beta}"
        )));
    }
    if log_y.len() != log_gbar.len() {
        return Err(Error::dim("smoothing chunk", log_y.len(), log_gbar.len()));
    }
    if log_gbar.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("smoothing input log gbar"));
    }
    let log_b = beta.ln();
    let log_1mb = if beta < 1.0 {
        (1.0 - beta).ln()
    } else {
        f64::NEG_INFINITY
    };
    for (ly, &lg) in log_y.iter_mut().zip(log_gbar) {
        let a = log_1mb + *ly;
        let b = log_b + lg;
        *ly = log_add_exp(a, b);
    }
    Ok(())
}

/// Contiguous partition of [0, n) with one active chunk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChunkState {
    pub n: usize,
    pub chunks: usize,
    pub active: usize,
    /// Number of rotations performed so far.
    pub rotations: usize,
}

impl ChunkState {
    pub fn new(n: usize, chunks: usize) -> Self {
        ChunkState {
            n,
            chunks,
            active: 0,
            rotations: 0,
        }
    }

    pub fn range_of(&self, chunk: usize) -> std::ops::Range<usize> {
        let base = self.n / self.chunks;
        let extra = self.n % self.chunks;
        let start = chunk * base + chunk.min(extra);
        let len = base + usize::from(chunk < extra);
        start..start + len
    }

    pub fn active_range(&self) -> std::ops::Range<usize> {
        self.range_of(self.active)
    }
}

/// Switch to the next chunk and overwrite its log-y entries with the
/// supplied fresh log ḡ values; all other entries are untouched.
pub fn chunk_rotate(state: &mut ChunkState, log_y: &mut [f64], log_gbar_new: &[f64]) -> Result<()> {
    state.active = (state.active + 1) % state.chunks;
    state.rotations += 1;
    let range = state.active_range();
    if log_gbar_new.len() != range.len() {
        return Err(Error::dim("chunk re-init", range.len(), log_gbar_new.len()));
    }
    log_y[range].copy_from_slice(log_gbar_new);
    Ok(())
}
