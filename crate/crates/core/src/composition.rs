//! Decoupled nested-expectation objectives and their sampling oracles.
//!
//! A problem is a pair (f_ν, g_ε̂) over a pool of size n: the outer function
//! is fixed to f_ν(y) = [log y]ᵀe_ν with ν uniform on the pool, the inner
//! vector map g is supplied per problem and evaluated in log-domain. The two
//! oracles mirror that split: `oracle_f` returns sampled indices with sparse
//! gradients e_ν/y_ν, `oracle_g` returns per-draw log-values plus
//! column-addressable Jacobian access.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// One inner noise realization ε̂.
pub type Draw = Vec<f64>;

/// Weighted contribution of one (column, draw) pair to a gradient
/// contraction: w · ∇θ log g_draw(θ)_col.
#[derive(Debug, Clone, Copy)]
pub struct WeightedTerm {
    pub col: usize,
    pub draw: usize,
    pub weight: f64,
}

/// The inner vector map g_ε̂: ℝᵖ → ℝⁿ, evaluated in log-domain (components
/// strictly positive by construction).
pub trait InnerG: Send + Sync {
    fn pool_size(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn sample_draw(&self, rng: &mut ChaCha8Rng) -> Draw;

    /// log g_ε̂(θ) at the given pool columns, written to `out` in order.
    fn log_g(&self, theta: &[f64], draw: &Draw, cols: &[usize], out: &mut [f64]) -> Result<()>;

    /// ∇θ log g_ε̂(θ)_col for a single draw and column.
    fn grad_log_g_col(&self, theta: &[f64], draw: &Draw, col: usize) -> Result<Vec<f64>>;

    /// ∇θ Σ terms w·log g_draw(θ)_col. Implementations may batch this; the
    /// default accumulates per-term column gradients.
    fn grad_weighted(
        &self,
        theta: &[f64],
        draws: &[Draw],
        terms: &[WeightedTerm],
    ) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.param_dim()];
        for term in terms {
            let g = self.grad_log_g_col(theta, &draws[term.draw], term.col)?;
            for (gi, &ci) in grad.iter_mut().zip(&g) {
                *gi += term.weight * ci;
            }
        }
        Ok(grad)
    }

    /// Batched value evaluation; same contract as `log_g` per draw.
    /// `out` is draw-major with stride `cols.len()`.
    fn log_g_batch(
        &self,
        theta: &[f64],
        draws: &[Draw],
        cols: &[usize],
        out: &mut [f64],
    ) -> Result<()> {
        for (a, draw) in draws.iter().enumerate() {
            let row = &mut out[a * cols.len()..(a + 1) * cols.len()];
            self.log_g(theta, draw, cols, row)
                .map_err(|e| Error::DrawEval {
                    draw: a,
                    source: Box::new(e),
                })?;
        }
        Ok(())
    }
}

/// A decoupled compositional objective with an instrumented draw counter.
pub struct CompositionalProblem {
    inner: Arc<dyn InnerG>,
    g_draws: AtomicU64,
}

impl CompositionalProblem {
    pub fn new(inner: Arc<dyn InnerG>) -> Self {
        CompositionalProblem {
            inner,
            g_draws: AtomicU64::new(0),
        }
    }

    pub fn pool_size(&self) -> usize {
        self.inner.pool_size()
    }

    pub fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    pub fn inner(&self) -> &Arc<dyn InnerG> {
        &self.inner
    }

    /// Total g-oracle draw evaluations so far (oracle-complexity accounting).
    pub fn g_eval_count(&self) -> u64 {
        self.g_draws.load(Ordering::Relaxed)
    }

    pub fn reset_eval_count(&self) {
        self.g_draws.store(0, Ordering::Relaxed);
    }
}

/// Column selection for a g-oracle call.
#[derive(Debug, Clone)]
pub enum Cols {
    All,
    Subset(Vec<usize>),
}

/// Sampled indices ν with the sparse gradients ∇f_ν(y) = e_ν/y_ν.
#[derive(Debug, Clone)]
pub struct FBatch {
    /// Sampled ν per draw, i.i.d. uniform over the active index range.
    pub indices: Vec<usize>,
    /// 1/y_ν per sample, linear domain.
    grads: Vec<f64>,
    /// −log y_ν per sample (log-domain view of the gradient entry).
    neg_log_y: Vec<f64>,
}

impl FBatch {
    /// Build from already-sampled indices against a full log-y vector
    /// indexed globally.
    pub fn from_indices(indices: Vec<usize>, log_y: &[f64]) -> Result<Self> {
        let mut grads = Vec::with_capacity(indices.len());
        let mut neg_log_y = Vec::with_capacity(indices.len());
        for &i in &indices {
            let ly = log_y[i];
            if !ly.is_finite() {
                return Err(Error::non_finite(format!("oracle_f: log y[{i}]")));
            }
            grads.push((-ly).exp());
            neg_log_y.push(-ly);
        }
        Ok(FBatch {
            indices,
            grads,
            neg_log_y,
        })
    }

    /// Test constructor with explicit gradient entries.
    pub fn from_parts(indices: Vec<usize>, grads: Vec<f64>) -> Self {
        let neg_log_y = grads.iter().map(|&g| g.abs().ln()).collect();
        FBatch {
            indices,
            grads,
            neg_log_y,
        }
    }

    pub fn k1(&self) -> usize {
        self.indices.len()
    }

    /// (ν, 1/y_ν) pairs, one per sample; each gradient has exactly one nonzero.
    pub fn grad_entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().cloned().zip(self.grads.iter().cloned())
    }

    pub fn neg_log_y(&self, sample: usize) -> f64 {
        self.neg_log_y[sample]
    }

    /// Mean sparse gradient ∇̄f as (col, value) pairs, sorted by column.
    pub fn mean_grad_entries(&self) -> Vec<(usize, f64)> {
        let mut pairs: Vec<(usize, f64)> = Vec::new();
        for (i, g) in self.grad_entries() {
            match pairs.binary_search_by_key(&i, |p| p.0) {
                Ok(pos) => pairs[pos].1 += g,
                Err(pos) => pairs.insert(pos, (i, g)),
            }
        }
        let k = self.k1() as f64;
        for p in &mut pairs {
            p.1 /= k;
        }
        pairs
    }

    /// Distinct sampled columns with multiplicities, sorted by column.
    pub fn counts(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for &i in &self.indices {
            match pairs.binary_search_by_key(&i, |p| p.0) {
                Ok(pos) => pairs[pos].1 += 1,
                Err(pos) => pairs.insert(pos, (i, 1)),
            }
        }
        pairs
    }
}

/// Sample K₁ outer indices i.i.d. uniform over `[base, base+len)`.
pub fn sample_outer_indices(
    base: usize,
    len: usize,
    k1: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    (0..k1).map(|_| base + rng.gen_range(0..len)).collect()
}

/// The f-oracle: K₁ i.i.d. indices over `[base, base + log_y.len())` plus
/// sparse gradients read from the supplied log-domain y values.
pub fn oracle_f(log_y: &[f64], base: usize, k1: usize, rng: &mut ChaCha8Rng) -> Result<FBatch> {
    if k1 == 0 {
        return Err(Error::Config("oracle_f needs K1 >= 1".into()));
    }
    if log_y.is_empty() {
        return Err(Error::Config("oracle_f over empty index range".into()));
    }
    let local = sample_outer_indices(0, log_y.len(), k1, rng);
    let mut grads = Vec::with_capacity(k1);
    let mut neg_log_y = Vec::with_capacity(k1);
    let mut indices = Vec::with_capacity(k1);
    for i in local {
        let ly = log_y[i];
        if !ly.is_finite() {
            return Err(Error::non_finite(format!("oracle_f: log y[{}]", base + i)));
        }
        indices.push(base + i);
        grads.push((-ly).exp());
        neg_log_y.push(-ly);
    }
    Ok(FBatch {
        indices,
        grads,
        neg_log_y,
    })
}

/// A g-oracle batch: draws, per-draw log-values at the evaluated columns,
/// and lazy column-addressable Jacobian access.
pub struct GBatch<'a> {
    problem: &'a CompositionalProblem,
    theta: Vec<f64>,
    draws: Vec<Draw>,
    /// Evaluated pool columns, sorted ascending.
    cols: Vec<usize>,
    /// Draw-major values, stride `cols.len()`.
    log_vals: Vec<f64>,
    /// log of the per-column sample mean, same order as `cols`.
    log_mean: Vec<f64>,
}

/// The g-oracle: K₂ i.i.d. draws evaluated at the requested columns. Draws
/// are sampled sequentially from the stream, evaluation fans out in parallel
/// with fixed chunking, so results are independent of thread count.
pub fn oracle_g<'a>(
    problem: &'a CompositionalProblem,
    theta: &[f64],
    k2: usize,
    cols: Cols,
    rng: &mut ChaCha8Rng,
) -> Result<GBatch<'a>> {
    if k2 == 0 {
        return Err(Error::Config("oracle_g needs K2 >= 1".into()));
    }
    let inner = problem.inner.clone();
    let cols: Vec<usize> = match cols {
        Cols::All => (0..inner.pool_size()).collect(),
        Cols::Subset(mut c) => {
            c.sort_unstable();
            c.dedup();
            c
        }
    };
    if cols.iter().any(|&c| c >= inner.pool_size()) {
        return Err(Error::Config("oracle_g column out of range".into()));
    }
    let draws: Vec<Draw> = (0..k2).map(|_| inner.sample_draw(rng)).collect();
    problem.g_draws.fetch_add(k2 as u64, Ordering::Relaxed);

    let width = cols.len();
    let mut log_vals = vec![0.0; k2 * width];
    const CHUNK: usize = 64;
    let results: Vec<Result<()>> = log_vals
        .par_chunks_mut(CHUNK * width)
        .enumerate()
        .map(|(ci, out)| {
            let start = ci * CHUNK;
            let stop = (start + CHUNK).min(k2);
            inner.log_g_batch(theta, &draws[start..stop], &cols, out)
        })
        .collect();
    for r in results {
        r?;
    }
    for (a, row) in log_vals.chunks(width).enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::DrawEval {
                draw: a,
                source: Box::new(Error::non_finite("log g values")),
            });
        }
    }

    let ln_k = (k2 as f64).ln();
    let log_mean = (0..width)
        .map(|c| {
            let m = (0..k2)
                .map(|a| log_vals[a * width + c])
                .fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (0..k2).map(|a| (log_vals[a * width + c] - m).exp()).sum();
            m + s.ln() - ln_k
        })
        .collect();

    Ok(GBatch {
        problem,
        theta: theta.to_vec(),
        draws,
        cols,
        log_vals,
        log_mean,
    })
}

impl<'a> GBatch<'a> {
    pub fn k2(&self) -> usize {
        self.draws.len()
    }

    pub fn problem_pool_size(&self) -> usize {
        self.problem.pool_size()
    }

    pub fn param_dim(&self) -> usize {
        self.problem.param_dim()
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn local(&self, col: usize) -> usize {
        self.cols
            .binary_search(&col)
            .unwrap_or_else(|_| panic!("column {col} not evaluated in this batch"))
    }

    /// Per-draw log-values in the order of `cols()`.
    pub fn log_values(&self, draw: usize) -> &[f64] {
        let w = self.cols.len();
        &self.log_vals[draw * w..(draw + 1) * w]
    }

    /// log ḡ per evaluated column, ḡ the linear-domain sample mean.
    pub fn log_mean(&self) -> &[f64] {
        &self.log_mean
    }

    pub fn log_mean_at(&self, col: usize) -> f64 {
        self.log_mean[self.local(col)]
    }

    /// (global column, log ḡ) pairs.
    pub fn log_mean_entries(&self) -> Vec<(usize, f64)> {
        self.cols
            .iter()
            .cloned()
            .zip(self.log_mean.iter().cloned())
            .collect()
    }

    /// ∇θ Σ coeffs c·log ḡ_col, one aggregated backward pass per problem
    /// chunk. This is the only Jacobian access the solver's hot path uses.
    pub fn contract_log_mean(&self, coeffs: &[(usize, f64)]) -> Result<Vec<f64>> {
        let k = self.k2();
        let ln_k = (k as f64).ln();
        let w = self.cols.len();
        let mut terms = Vec::with_capacity(coeffs.len() * k);
        for &(col, c) in coeffs {
            if c == 0.0 {
                continue;
            }
            let lc = self.local(col);
            let lse = self.log_mean[lc] + ln_k;
            for a in 0..k {
                // softmax weight of draw a in the column's log-mean
                let wgt = (self.log_vals[a * w + lc] - lse).exp();
                if wgt > 0.0 {
                    terms.push(WeightedTerm {
                        col,
                        draw: a,
                        weight: c * wgt,
                    });
                }
            }
        }
        if terms.is_empty() {
            return Ok(vec![0.0; self.problem.param_dim()]);
        }
        self.problem
            .inner
            .grad_weighted(&self.theta, &self.draws, &terms)
    }

    /// ∇θ log ḡ_col — column of the log-domain mean Jacobian.
    pub fn log_mean_jacobian_col(&self, col: usize) -> Result<Vec<f64>> {
        self.contract_log_mean(&[(col, 1.0)])
    }

    /// ∇θ ḡ_col — linear-domain column of the mean Jacobian (view that
    /// exponentiates; in-range use only).
    pub fn mean_jacobian_col(&self, col: usize) -> Result<Vec<f64>> {
        let scale = self.log_mean_at(col).exp();
        let mut g = self.log_mean_jacobian_col(col)?;
        for v in &mut g {
            *v *= scale;
        }
        Ok(g)
    }

    /// Per-draw linear-domain Jacobian column ∇θ g_draw(θ)_col.
    pub fn draw_jacobian_col(&self, draw: usize, col: usize) -> Result<Vec<f64>> {
        let lc = self.local(col);
        let scale = self.log_vals[draw * self.cols.len() + lc].exp();
        let mut g = self
            .problem
            .inner
            .grad_log_g_col(&self.theta, &self.draws[draw], col)?;
        for v in &mut g {
            *v *= scale;
        }
        Ok(g)
    }

    pub fn draws(&self) -> &[Draw] {
        &self.draws
    }
}

/// Plug-in ground-truth gradient: ∇ḡᵀ·(1/n)Σ_ν e_ν/ḡ_ν with ḡ averaged over
/// `k_ref` draws and the outer expectation summed exactly. Diagnostics only.
pub struct ReferenceGradient {
    pub grad: Vec<f64>,
    /// Set when k_ref is too small for the documented bias to be negligible.
    pub low_sample_warning: bool,
}

pub fn reference_gradient(
    problem: &CompositionalProblem,
    theta: &[f64],
    k_ref: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ReferenceGradient> {
    let n = problem.pool_size();
    let batch = oracle_g(problem, theta, k_ref, Cols::All, rng)?;
    // ∇L = Σ_ν (1/n)·∇ḡ_ν/ḡ_ν = Σ_ν (1/n)·∇log ḡ_ν
    let coeffs: Vec<(usize, f64)> = (0..n).map(|c| (c, 1.0 / n as f64)).collect();
    let grad = batch.contract_log_mean(&coeffs)?;
    Ok(ReferenceGradient {
        grad,
        low_sample_warning: k_ref < 1_000,
    })
}

/// Exact loss of the pool-discretized objective under a deterministic or
/// analytically averaged inner map: (1/n) Σ_ν log ḡ_ν.
pub fn plug_in_loss(log_mean: &[f64]) -> f64 {
    log_mean.iter().sum::<f64>() / log_mean.len() as f64
}

/// Empirical estimates of the boundedness/smoothness constants. The g-side
/// values are sup-estimates over the probe set (lower bounds of the true
/// sups); the f-side values are analytic for f = log on the probed y-range.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AssumptionConstants {
    pub b_f: f64,
    pub m_f: f64,
    pub l_f: f64,
    pub m_g: f64,
    pub l_g: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
}

impl AssumptionConstants {
    /// Smoothness constant of the composite objective, M_g²L_f + L_g M_f.
    pub fn lipschitz_smoothness(&self) -> f64 {
        self.m_g * self.m_g * self.l_f + self.l_g * self.m_f
    }
}

fn op_norm(rows: usize, cols: usize, m: &[f64]) -> f64 {
    // power iteration on MᵀM
    let mut v = vec![1.0 / (cols as f64).sqrt(); cols];
    let mut s = 0.0;
    for _ in 0..50 {
        let mut mv = vec![0.0; rows];
        for r in 0..rows {
            mv[r] = (0..cols).map(|c| m[r * cols + c] * v[c]).sum();
        }
        let mut mtv = vec![0.0; cols];
        for c in 0..cols {
            mtv[c] = (0..rows).map(|r| m[r * cols + c] * mv[r]).sum();
        }
        let norm = mtv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        s = norm.sqrt();
        for c in 0..cols {
            v[c] = mtv[c] / norm;
        }
    }
    s
}

/// Estimate Assumption-style constants from probe points. Uses a small
/// number of inner draws per probe; Jacobians are fully materialized, so
/// keep probes and the pool small.
pub fn estimate_constants(
    problem: &CompositionalProblem,
    probes: &[Vec<f64>],
    draws_per_probe: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AssumptionConstants> {
    if probes.len() < 2 {
        return Err(Error::Config(
            "estimate_constants needs >= 2 probe points".into(),
        ));
    }
    let n = problem.pool_size();
    let p = problem.param_dim();
    let inner = problem.inner();

    let mut m_g: f64 = 0.0;
    let mut l_g: f64 = 0.0;
    let mut sigma2: f64 = 0.0;
    let mut sigma3: f64 = 0.0;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    let mut sigma1: f64 = 0.0;

    let all_cols: Vec<usize> = (0..n).collect();
    let mut jacs: Vec<Vec<f64>> = Vec::with_capacity(probes.len());

    for theta in probes {
        let batch = oracle_g(problem, theta, draws_per_probe, Cols::All, rng)?;
        let gbar: Vec<f64> = batch.log_mean().iter().map(|&l| l.exp()).collect();
        for &g in &gbar {
            y_min = y_min.min(g);
            y_max = y_max.max(g);
        }

        // per-draw linear Jacobians, n x p row-major
        let mut mean_jac = vec![0.0; n * p];
        let mut dev_sq = 0.0;
        let mut val_dev_sq = 0.0;
        let mut per_draw: Vec<Vec<f64>> = Vec::with_capacity(draws_per_probe);
        for a in 0..draws_per_probe {
            let mut jac = vec![0.0; n * p];
            for &c in &all_cols {
                let col = batch.draw_jacobian_col(a, c)?;
                jac[c * p..(c + 1) * p].copy_from_slice(&col);
            }
            m_g = m_g.max(op_norm(n, p, &jac));
            for (mi, &ji) in mean_jac.iter_mut().zip(&jac) {
                *mi += ji / draws_per_probe as f64;
            }
            let g_a: Vec<f64> = batch.log_values(a).iter().map(|&l| l.exp()).collect();
            val_dev_sq += g_a
                .iter()
                .zip(&gbar)
                .map(|(&x, &m)| (x - m) * (x - m))
                .sum::<f64>();
            per_draw.push(jac);
        }
        for jac in &per_draw {
            dev_sq += jac
                .iter()
                .zip(&mean_jac)
                .map(|(&x, &m)| (x - m) * (x - m))
                .sum::<f64>();
        }
        sigma2 = sigma2.max(dev_sq / draws_per_probe as f64);
        sigma3 = sigma3.max(val_dev_sq / draws_per_probe as f64);

        // exact variance of the sparse outer gradient at ḡ
        let inv: Vec<f64> = gbar.iter().map(|&g| 1.0 / g).collect();
        let mean_sq: f64 = inv.iter().map(|&x| x * x).sum::<f64>() / n as f64;
        let mean_norm_sq: f64 = inv
            .iter()
            .map(|&x| x / n as f64)
            .map(|x| x * x)
            .sum::<f64>();
        sigma1 = sigma1.max(mean_sq - mean_norm_sq);

        jacs.push(mean_jac);
    }

    for i in 0..probes.len() {
        for j in (i + 1)..probes.len() {
            let dth: f64 = probes[i]
                .iter()
                .zip(&probes[j])
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dth == 0.0 {
                continue;
            }
            let diff: Vec<f64> = jacs[i].iter().zip(&jacs[j]).map(|(&a, &b)| a - b).collect();
            l_g = l_g.max(op_norm(n, p, &diff) / dth);
        }
    }

    let _ = inner;
    Ok(AssumptionConstants {
        b_f: y_min.ln().abs().max(y_max.ln().abs()),
        m_f: 1.0 / y_min,
        l_f: 1.0 / (y_min * y_min),
        m_g,
        l_g,
        sigma1,
        sigma2,
        sigma3,
    })
}
