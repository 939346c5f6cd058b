//! Randomized column sketching for the Jacobian–gradient product
//! ∇ḡᵀ∇̄f, and its sparse log-domain adaptation.
//!
//! The dense estimator samples a uniform subset S of d_t columns without
//! replacement and scales by n/d_t, which is unbiased for the full product.
//! The sparse variant first drops the zero entries of the combined outer
//! weight vector k_t (nonzero only at sampled ν indices), subsamples those,
//! and rescales by |support|/d_t; the weights themselves are assembled in
//! log-domain and exponentiated once per nonzero entry.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::composition::{FBatch, GBatch};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SketchMode {
    UniformSubset,
    SparseNonzero,
}

#[derive(Debug, Clone, Copy)]
pub struct SketchPlan {
    pub d_t: usize,
    pub mode: SketchMode,
}

impl SketchPlan {
    pub fn uniform(d_t: usize) -> Self {
        SketchPlan {
            d_t,
            mode: SketchMode::UniformSubset,
        }
    }

    pub fn sparse(d_t: usize) -> Self {
        SketchPlan {
            d_t,
            mode: SketchMode::SparseNonzero,
        }
    }

    /// Estimator scale for a base index set of the given size.
    pub fn scale(&self, base: usize, sampled: usize) -> f64 {
        base as f64 / sampled as f64
    }
}

/// Uniform subset of `d` elements of `pool`, without replacement
/// (partial Fisher–Yates over a local copy).
pub fn sample_subset(pool: &[usize], d: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    assert!(d <= pool.len(), "subset larger than pool");
    let mut items = pool.to_vec();
    for i in 0..d {
        let j = rng.gen_range(i..items.len());
        items.swap(i, j);
    }
    items.truncate(d);
    items
}

/// Sparse combined outer-gradient weights: entry j carries
/// log k_j = log ḡ_j − log K₁ − log y_j + log Σᵢ 𝕀(νᵢ = j),
/// absent wherever no ν sample hit j.
#[derive(Debug, Clone)]
pub struct SparseOuterGrad {
    /// (column, log k_j), sorted by column.
    pub entries: Vec<(usize, f64)>,
    /// K₁ used in the normalization.
    pub k1: usize,
}

impl SparseOuterGrad {
    pub fn support(&self) -> usize {
        self.entries.len()
    }

    /// Linear-domain view, exponentiating once per entry.
    pub fn linear_entries(&self) -> Vec<(usize, f64)> {
        self.entries.iter().map(|&(c, l)| (c, l.exp())).collect()
    }
}

/// Assemble k_t in log-domain from per-column log ḡ, the smoothing vector
/// log y (globally indexed), and the ν occupancy counts.
pub fn log_scale_combine(
    log_gbar: &[(usize, f64)],
    log_y: &[f64],
    counts: &[(usize, usize)],
    k1: usize,
) -> Result<SparseOuterGrad> {
    if k1 == 0 {
        return Err(Error::Config("log_scale_combine needs K1 >= 1".into()));
    }
    let ln_k1 = (k1 as f64).ln();
    let mut entries = Vec::with_capacity(counts.len());
    for &(col, count) in counts {
        if count == 0 {
            continue;
        }
        let lg = log_gbar
            .iter()
            .find(|&&(c, _)| c == col)
            .map(|&(_, v)| v)
            .ok_or_else(|| {
                Error::Config(format!("log_scale_combine: no log gbar for column {col}"))
            })?;
        let ly = log_y[col];
        if !ly.is_finite() {
            return Err(Error::non_finite(format!("log y[{col}]")));
        }
        let log_k = lg - ln_k1 - ly + (count as f64).ln();
        entries.push((col, log_k));
    }
    entries.sort_by_key(|e| e.0);
    Ok(SparseOuterGrad { entries, k1 })
}

/// Dense-mode sketch with the subset drawn internally.
pub fn sketch_gradient(
    f: &FBatch,
    g: &GBatch,
    plan: &SketchPlan,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let n = g.cols().len();
    // dense mode expects the batch to cover the pool it sketches over
    let pool: Vec<usize> = g.cols().to_vec();
    if plan.d_t == 0 || plan.d_t > n {
        return Err(Error::Config(format!(
            "sketch size {} outside [1, {n}]",
            plan.d_t
        )));
    }
    let subset = sample_subset(&pool, plan.d_t, rng);
    sketch_gradient_with_subset(f, g, &subset)
}

/// Dense-mode sketch over an explicit subset S:
/// (n/|S|)·Σ_{k∈S} ∇ḡᵀ(:,k)·∇̄f(k). Exposed so exhaustive-subset tests can
/// enumerate every S.
pub fn sketch_gradient_with_subset(f: &FBatch, g: &GBatch, subset: &[usize]) -> Result<Vec<f64>> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let n = g.problem_pool_size();
    let scale = n as f64 / subset.len() as f64;
    let fbar = f.mean_grad_entries();
    let mut coeffs: Vec<(usize, f64)> = Vec::new();
    for &k in subset {
        if let Ok(pos) = fbar.binary_search_by_key(&k, |p| p.0) {
            let c = scale * fbar[pos].1;
            if c != 0.0 {
                coeffs.push((k, c * g.log_mean_at(k).exp()));
            }
        }
    }
    if coeffs.is_empty() {
        return Ok(vec![0.0; g.param_dim()]);
    }
    // Σ c_k·∇ḡ(:,k) = Σ c_k·ḡ_k·∇log ḡ(:,k); the ḡ_k factor is folded into
    // the coefficients above so one log-domain contraction serves both modes.
    g.contract_log_mean(&coeffs)
}

/// Sparse-mode sketch: subsample the nonzero support of k_t (falling back
/// to the full support when it is no larger than d_t) and contract
/// scale·k_j against the log-domain Jacobian columns.
pub fn sketch_gradient_sparse(
    k: &SparseOuterGrad,
    g: &GBatch,
    plan: &SketchPlan,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if plan.mode != SketchMode::SparseNonzero {
        return Err(Error::Config(
            "sketch_gradient_sparse needs a sparse-nonzero plan".into(),
        ));
    }
    if k.entries.is_empty() {
        return Ok(vec![0.0; g.param_dim()]);
    }
    let support: Vec<usize> = k.entries.iter().map(|&(c, _)| c).collect();
    let chosen = if plan.d_t < support.len() {
        sample_subset(&support, plan.d_t, rng)
    } else {
        support.clone()
    };
    let scale = plan.scale(support.len(), chosen.len());
    let mut coeffs = Vec::with_capacity(chosen.len());
    for c in chosen {
        let pos = k
            .entries
            .binary_search_by_key(&c, |e| e.0)
            .expect("chosen column is in the support");
        coeffs.push((c, scale * k.entries[pos].1.exp()));
    }
    g.contract_log_mean(&coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};

    #[test]
    fn subset_sampling_is_uniform_without_replacement() {
        let pool: Vec<usize> = (0..6).collect();
        let mut rng = stream(1, 0, StreamId::SketchSubset);
        let mut hits = [0usize; 6];
        let reps = 60_000;
        for _ in 0..reps {
            let s = sample_subset(&pool, 2, &mut rng);
            assert_eq!(s.len(), 2);
            assert_ne!(s[0], s[1]);
            for &i in &s {
                hits[i] += 1;
            }
        }
        // each element appears with probability 2/6
        let expect = reps as f64 / 3.0;
        let sd = (reps as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for &h in &hits {
            assert!((h as f64 - expect).abs() < 4.0 * sd, "{h} vs {expect}");
        }
    }

    #[test]
    fn log_scale_combine_cancels_when_y_tracks_gbar() {
        // ḡ = y and each sampled j hit once: k_j = 1/K₁
        let log_gbar = vec![(0, 0.7), (2, -1.1)];
        let log_y = vec![0.7, 9.9, -1.1];
        let counts = vec![(0, 1), (2, 1)];
        let k = log_scale_combine(&log_gbar, &log_y, &counts, 2).unwrap();
        for &(_, lk) in &k.entries {
            assert!((lk.exp() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn log_scale_combine_ratio_two() {
        // single sample ν=j with ḡ_j = 2 y_j: k_j = 2
        let log_gbar = vec![(1, (2.0f64).ln() + 0.3)];
        let log_y = vec![0.0, 0.3];
        let counts = vec![(1, 1)];
        let k = log_scale_combine(&log_gbar, &log_y, &counts, 1).unwrap();
        assert!((k.entries[0].1.exp() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn log_scale_combine_matches_linear_formula() {
        // randomized fixture vs (count/K₁)·ḡ_j/y_j
        let mut rng = stream(5, 0, StreamId::Scratch);
        use rand::Rng;
        for _ in 0..200 {
            let n = 6;
            let log_gbar: Vec<(usize, f64)> =
                (0..n).map(|c| (c, rng.gen_range(-3.0..3.0))).collect();
            let log_y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let counts: Vec<(usize, usize)> = (0..n)
                .filter_map(|c| {
                    let k = rng.gen_range(0..4usize);
                    (k > 0).then_some((c, k))
                })
                .collect();
            let k1 = 8;
            let k = log_scale_combine(&log_gbar, &log_y, &counts, k1).unwrap();
            for (&(c, lk), &(c2, cnt)) in k.entries.iter().zip(&counts) {
                assert_eq!(c, c2);
                let linear = cnt as f64 / k1 as f64 * (log_gbar[c].1.exp() / log_y[c].exp());
                assert!((lk.exp() - linear).abs() <= 1e-10 * linear.abs().max(1.0));
            }
        }
    }
}
