//! Semi-implicit variational objectives over a fixed sample pool.
//!
//! The variational family is hierarchical: ε ~ N(0, c·I) mixes a
//! reparameterized Gaussian conditional q_θ(z|ε) = N(μ_θ1(ε), factor(θ2))
//! whose marginal is implicit. A pool of n outer samples (uᵢ, εᵢ)
//! discretizes the outer expectation; the inner map g_ε̂(θ) stacks the n
//! log-ratios log q_θ(h_θ(uⱼ;εⱼ)|ε̂) − log target(h_θ(uⱼ;εⱼ)), carried in
//! log-domain throughout.

pub mod blr;
pub mod targets;

pub use blr::{synthetic_dataset, BlrDataset};
pub use targets::{toy_log_density, CustomTarget, TargetDensity, ToyKind};

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composition::{CompositionalProblem, Draw, InnerG, WeightedTerm};
use crate::diffcore::gaussian::{logpdf_chol, logpdf_diag};
use crate::diffcore::mlp::MlpSpec;
use crate::diffcore::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{stream, StreamId};

/// Shape of the conditional covariance factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovShape {
    Diag,
    Cholesky,
}

/// Hierarchical variational family: mixing q(ε) = N(0, c·I), conditional
/// mean from an MLP, conditional covariance from an unconstrained factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemiImplicitModel {
    pub eps_dim: usize,
    pub z_dim: usize,
    /// c in q(ε) = N(0, c·I).
    pub mixing_variance: f64,
    pub mean_net: MlpSpec,
    pub cov: CovShape,
}

impl SemiImplicitModel {
    pub fn new(
        eps_dim: usize,
        z_dim: usize,
        mixing_variance: f64,
        mean_net: MlpSpec,
        cov: CovShape,
    ) -> Result<Self> {
        if mean_net.input_dim() != eps_dim {
            return Err(Error::dim("mean net input", eps_dim, mean_net.input_dim()));
        }
        if mean_net.output_dim() != z_dim {
            return Err(Error::dim("mean net output", z_dim, mean_net.output_dim()));
        }
        if mixing_variance <= 0.0 {
            return Err(Error::Config("mixing variance must be positive".into()));
        }
        Ok(SemiImplicitModel {
            eps_dim,
            z_dim,
            mixing_variance,
            mean_net,
            cov,
        })
    }

    pub fn theta2_len(&self) -> usize {
        match self.cov {
            CovShape::Diag => self.z_dim,
            CovShape::Cholesky => self.z_dim * (self.z_dim + 1) / 2,
        }
    }

    pub fn theta2_offset(&self) -> usize {
        self.mean_net.param_count()
    }

    pub fn param_count(&self) -> usize {
        self.theta2_offset() + self.theta2_len()
    }

    /// Xavier-normal mean net; factor diagonal starts at `log_std_init`
    /// (off-diagonals zero).
    pub fn init_params(&self, seed: u64, log_std_init: f64) -> Vec<f64> {
        let mut rng = stream(seed, 0, StreamId::ParamInit);
        let mut params = self.mean_net.init_params(&mut rng);
        match self.cov {
            CovShape::Diag => params.extend(std::iter::repeat_n(log_std_init, self.z_dim)),
            CovShape::Cholesky => {
                // packed lower-triangular rows: zero off-diagonals, then
                // the log-diagonal entry
                for i in 0..self.z_dim {
                    params.extend(std::iter::repeat_n(0.0, i));
                    params.push(log_std_init);
                }
            }
        }
        params
    }

    pub fn sample_eps(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = self.mixing_variance.sqrt();
        (0..self.eps_dim)
            .map(|_| s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    pub fn mean(&self, theta: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
        self.mean_net.forward(&theta[..self.theta2_offset()], eps)
    }

    /// h_θ(u; ε) = μ_θ1(ε) + factor(θ2)·u.
    pub fn transport(&self, theta: &[f64], u: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.mean(theta, eps)?;
        let t2 = &theta[self.theta2_offset()..];
        match self.cov {
            CovShape::Diag => {
                for i in 0..self.z_dim {
                    z[i] += t2[i].exp() * u[i];
                }
            }
            CovShape::Cholesky => {
                for i in 0..self.z_dim {
                    let row = i * (i + 1) / 2;
                    for j in 0..i {
                        z[i] += t2[row + j] * u[j];
                    }
                    z[i] += t2[row + i].exp() * u[i];
                }
            }
        }
        Ok(z)
    }

    /// log q_θ(z | ε̂) with the conditional mean already evaluated.
    pub fn conditional_logpdf_at(
        &self,
        theta: &[f64],
        z: &[f64],
        mean: &[f64],
        scratch: &mut Vec<f64>,
    ) -> f64 {
        let t2 = &theta[self.theta2_offset()..];
        match self.cov {
            CovShape::Diag => logpdf_diag(z, mean, t2),
            CovShape::Cholesky => logpdf_chol(z, mean, t2, scratch),
        }
    }

    /// Draw z ~ q_θ(z) by ancestral sampling through the mixing variable.
    pub fn sample_z(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let eps = self.sample_eps(rng);
        let u: Vec<f64> = (0..self.z_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.transport(theta, &u, &eps)
    }

    /// Record h_θ(u; ε) on a tape. `factor` must be the θ2 parameter node.
    fn transport_on_tape(
        &self,
        tape: &mut Tape,
        factor: Var,
        u: &[f64],
        eps: &[f64],
    ) -> Result<Var> {
        let ev = tape.constv(eps);
        let mean = self.mean_net.forward_on_tape(tape, 0, ev)?;
        let uv = tape.constv(u);
        let spread = match self.cov {
            CovShape::Diag => {
                let s = tape.exp(factor);
                tape.mul(s, uv)
            }
            CovShape::Cholesky => tape.tri_matvec(factor, uv),
        };
        Ok(tape.add(mean, spread))
    }

    fn conditional_logpdf_on_tape(&self, tape: &mut Tape, factor: Var, z: Var, mean: Var) -> Var {
        match self.cov {
            CovShape::Diag => tape.gauss_logpdf_diag(z, mean, factor),
            CovShape::Cholesky => tape.gauss_logpdf_chol(z, mean, factor),
        }
    }
}

/// The fixed outer-sample pool {μᵢ = (uᵢ, εᵢ)}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplePool {
    pub us: Vec<Vec<f64>>,
    pub epss: Vec<Vec<f64>>,
    pub seed: u64,
}

impl SamplePool {
    pub fn len(&self) -> usize {
        self.us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.us.is_empty()
    }
}

/// Deterministic pool of n outer samples: uᵢ ~ N(0, I_z), εᵢ ~ q(ε).
pub fn build_pool(model: &SemiImplicitModel, n: usize, seed: u64) -> Result<SamplePool> {
    if n == 0 {
        return Err(Error::Config("pool size must be >= 1".into()));
    }
    let mut rng = stream(seed, 0, StreamId::PoolBuild);
    let mut us = Vec::with_capacity(n);
    let mut epss = Vec::with_capacity(n);
    for _ in 0..n {
        us.push(
            (0..model.z_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        epss.push(model.sample_eps(&mut rng));
    }
    Ok(SamplePool { us, epss, seed })
}

/// One log density-ratio: log q_θ(h_θ(uⱼ;εⱼ) | ε̂) − log target(h_θ(uⱼ;εⱼ)).
/// θ enters through both the transport and the conditional density.
pub fn log_ratio_j(
    model: &SemiImplicitModel,
    theta: &[f64],
    pool: &SamplePool,
    j: usize,
    eps_hat: &[f64],
    target: &TargetDensity,
) -> Result<f64> {
    let h = model.transport(theta, &pool.us[j], &pool.epss[j])?;
    let lt = target.log_density(&h)?;
    if !lt.is_finite() {
        return Err(Error::TargetDensity { index: j });
    }
    let mean = model.mean(theta, eps_hat)?;
    let mut scratch = Vec::new();
    let lq = model.conditional_logpdf_at(theta, &h, &mean, &mut scratch);
    Ok(lq - lt)
}

/// Draws per chunked gradient tape. Keeps per-tape arenas small while
/// amortizing the pool-side recording across many draws.
const GRAD_DRAW_CHUNK: usize = 64;

struct SiviInner {
    model: SemiImplicitModel,
    pool: SamplePool,
    target: TargetDensity,
}

impl SiviInner {
    /// Record log J_{μ_col, ε̂} for every (col, weight) term of one
    /// draw-chunk into a single tape and return the weighted-sum gradient.
    fn chunk_gradient(
        &self,
        theta: &[f64],
        draws: &[&Draw],
        per_draw_terms: &[&[(usize, f64)]],
        cols: &[usize],
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new(theta);
        let factor = tape.param(self.model.theta2_offset(), self.model.theta2_len());

        // pool-side transports and target values, shared across draws
        let mut h_vars = Vec::with_capacity(cols.len());
        let mut t_vars = Vec::with_capacity(cols.len());
        for &j in cols {
            let h = self.model.transport_on_tape(
                &mut tape,
                factor,
                &self.pool.us[j],
                &self.pool.epss[j],
            )?;
            let lt = self.target.emit(&mut tape, h);
            if !tape.scalar_val(lt).is_finite() {
                return Err(Error::TargetDensity { index: j });
            }
            h_vars.push(h);
            t_vars.push(lt);
        }
        let col_slot = |j: usize| cols.binary_search(&j).expect("column recorded");

        let mut ratio_vars = Vec::new();
        let mut weights = Vec::new();
        for (draw, terms) in draws.iter().zip(per_draw_terms) {
            let ev = tape.constv(draw);
            let mean = self.model.mean_net.forward_on_tape(&mut tape, 0, ev)?;
            for &(col, w) in *terms {
                let s = col_slot(col);
                let lq = self
                    .model
                    .conditional_logpdf_on_tape(&mut tape, factor, h_vars[s], mean);
                let ratio = tape.sub(lq, t_vars[s]);
                ratio_vars.push(ratio);
                weights.push(w);
            }
        }
        let objective = tape.weighted_sum(&ratio_vars, &weights);
        tape.backward(objective)
    }
}

impl InnerG for SiviInner {
    fn pool_size(&self) -> usize {
        self.pool.len()
    }

    fn param_dim(&self) -> usize {
        self.model.param_count()
    }

    fn sample_draw(&self, rng: &mut ChaCha8Rng) -> Draw {
        self.model.sample_eps(rng)
    }

    fn log_g(&self, theta: &[f64], draw: &Draw, cols: &[usize], out: &mut [f64]) -> Result<()> {
        let mean = self.model.mean(theta, draw)?;
        let mut scratch = Vec::new();
        for (slot, &j) in cols.iter().enumerate() {
            let h = self
                .model
                .transport(theta, &self.pool.us[j], &self.pool.epss[j])?;
            let lt = self.target.log_density(&h)?;
            if !lt.is_finite() {
                return Err(Error::TargetDensity { index: j });
            }
            let lq = self
                .model
                .conditional_logpdf_at(theta, &h, &mean, &mut scratch);
            out[slot] = lq - lt;
        }
        Ok(())
    }

    fn log_g_batch(
        &self,
        theta: &[f64],
        draws: &[Draw],
        cols: &[usize],
        out: &mut [f64],
    ) -> Result<()> {
        // pool-side quantities do not depend on the draw; hoist them
        let mut hs = Vec::with_capacity(cols.len());
        let mut lts = Vec::with_capacity(cols.len());
        for &j in cols {
            let h = self
                .model
                .transport(theta, &self.pool.us[j], &self.pool.epss[j])?;
            let lt = self.target.log_density(&h)?;
            if !lt.is_finite() {
                return Err(Error::TargetDensity { index: j });
            }
            hs.push(h);
            lts.push(lt);
        }
        let mut scratch = Vec::new();
        let width = cols.len();
        for (a, draw) in draws.iter().enumerate() {
            let mean = self.model.mean(theta, draw).map_err(|e| Error::DrawEval {
                draw: a,
                source: Box::new(e),
            })?;
            for slot in 0..width {
                let lq = self
                    .model
                    .conditional_logpdf_at(theta, &hs[slot], &mean, &mut scratch);
                out[a * width + slot] = lq - lts[slot];
            }
        }
        Ok(())
    }

    fn grad_log_g_col(&self, theta: &[f64], draw: &Draw, col: usize) -> Result<Vec<f64>> {
        self.chunk_gradient(theta, &[draw], &[&[(col, 1.0)]], &[col])
    }

    fn grad_weighted(
        &self,
        theta: &[f64],
        draws: &[Draw],
        terms: &[WeightedTerm],
    ) -> Result<Vec<f64>> {
        // regroup per draw, then process fixed-size draw chunks in parallel
        let mut per_draw: Vec<Vec<(usize, f64)>> = vec![Vec::new(); draws.len()];
        for t in terms {
            per_draw[t.draw].push((t.col, t.weight));
        }
        let active: Vec<usize> = (0..draws.len())
            .filter(|&a| !per_draw[a].is_empty())
            .collect();

        let chunk_grads: Vec<Result<Vec<f64>>> = active
            .par_chunks(GRAD_DRAW_CHUNK)
            .map(|chunk| {
                let chunk_draws: Vec<&Draw> = chunk.iter().map(|&a| &draws[a]).collect();
                let chunk_terms: Vec<&[(usize, f64)]> =
                    chunk.iter().map(|&a| per_draw[a].as_slice()).collect();
                let mut chunk_cols: Vec<usize> = Vec::new();
                for ts in &chunk_terms {
                    for &(c, _) in *ts {
                        if let Err(pos) = chunk_cols.binary_search(&c) {
                            chunk_cols.insert(pos, c);
                        }
                    }
                }
                self.chunk_gradient(theta, &chunk_draws, &chunk_terms, &chunk_cols)
            })
            .collect();

        let mut grad = vec![0.0; self.param_dim()];
        for g in chunk_grads {
            let g = g?;
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v;
            }
        }
        Ok(grad)
    }
}

/// Assemble the decoupled compositional objective for a model/pool/target
/// triple.
pub fn make_compositional(
    model: SemiImplicitModel,
    pool: SamplePool,
    target: TargetDensity,
) -> Result<CompositionalProblem> {
    if target.dim() != model.z_dim {
        return Err(Error::dim("target dimension", model.z_dim, target.dim()));
    }
    for u in &pool.us {
        if u.len() != model.z_dim {
            return Err(Error::dim("pool u entry", model.z_dim, u.len()));
        }
    }
    Ok(CompositionalProblem::new(Arc::new(SiviInner {
        model,
        pool,
        target,
    })))
}
