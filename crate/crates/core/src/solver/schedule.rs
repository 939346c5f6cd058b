//! Hyperparameter schedules and their validation.
//!
//! The step-size/batch schedule family is
//!   α_t = C_α/t^{1/5},  β_t = C_β,  K_t^{(i)} = ⌈C_i·t^{4/5}⌉,
//!   γ_t^{(1)} = C_γ·μ^t,  γ_t^{(2)} = 1 − (C_α/t^{2/5})·(1 − C_γμ^t)².
//! `constant_batches` pins K_t^{(i)} = ⌈C_i⌉ instead, matching the
//! experiment tables' fixed per-iteration batch sizes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SketchModeCfg {
    UniformSubset,
    SparseNonzero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMode {
    /// Reservoir-sampled uniform draw from the post-update iterates.
    UniformSample,
    FinalIterate,
}

/// Per-parameter-group overrides of C_α and C_γ (half-open index range).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamGroup {
    pub start: usize,
    pub end: usize,
    pub c_alpha: f64,
    pub c_gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub c_alpha: f64,
    pub c_beta: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c_gamma: f64,
    pub mu: f64,
    pub xi: f64,
    /// Sketch size, constant across iterations.
    pub d_t: usize,
    /// Number of contiguous chunks the smoothing index set is split into.
    pub chunks: usize,
    /// Iteration budget T.
    pub iters: usize,
    pub constant_batches: bool,
    pub sketch: SketchModeCfg,
    pub output: OutputMode,
    #[serde(default)]
    pub groups: Vec<ParamGroup>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            c_alpha: 3e-4,
            c_beta: 0.99,
            c1: 100.0,
            c2: 1000.0,
            c3: 100.0,
            c_gamma: 0.9,
            mu: 0.999,
            xi: 1e-8,
            d_t: 64,
            chunks: 1,
            iters: 200,
            constant_batches: true,
            sketch: SketchModeCfg::SparseNonzero,
            output: OutputMode::UniformSample,
            groups: Vec::new(),
        }
    }
}

/// Per-iteration values of every scheduled quantity (base parameter group).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub alpha: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
}

fn batch(c: f64, t: usize, constant: bool) -> usize {
    let v = if constant {
        c
    } else {
        c * (t as f64).powf(0.8)
    };
    // ceil of the real-valued formula; snap float artifacts like
    // 100·32^{4/5} = 1600.0000000000002 back to the mathematical value
    let r = v.round();
    let k = if (v - r).abs() < 1e-9 * r.abs().max(1.0) {
        r
    } else {
        v.ceil()
    };
    (k as usize).max(1)
}

/// γ schedules for one (C_α, C_γ) pair.
pub fn gammas(t: usize, c_alpha: f64, c_gamma: f64, mu: f64) -> (f64, f64) {
    let tf = t as f64;
    let g1 = c_gamma * mu.powi(t as i32);
    let g2 = 1.0 - c_alpha / tf.powf(0.4) * (1.0 - g1) * (1.0 - g1);
    (g1, g2)
}

pub fn alpha(t: usize, c_alpha: f64) -> f64 {
    c_alpha / (t as f64).powf(0.2)
}

/// All scheduled quantities at iteration t ≥ 1 for the base group.
pub fn schedule(t: usize, cfg: &ScheduleConfig) -> StepSchedule {
    assert!(t >= 1, "schedules start at t = 1");
    let (gamma1, gamma2) = gammas(t, cfg.c_alpha, cfg.c_gamma, cfg.mu);
    StepSchedule {
        alpha: alpha(t, cfg.c_alpha),
        beta: cfg.c_beta,
        gamma1,
        gamma2,
        k1: batch(cfg.c1, t, cfg.constant_batches),
        k2: batch(cfg.c2, t, cfg.constant_batches),
        k3: batch(cfg.c3, t, cfg.constant_batches),
    }
}

impl ScheduleConfig {
    /// Groups covering all of [0, p): explicit overrides first, the base
    /// constants on the remainder.
    pub fn resolved_groups(&self, p: usize) -> Vec<ParamGroup> {
        if self.groups.is_empty() {
            return vec![ParamGroup {
                start: 0,
                end: p,
                c_alpha: self.c_alpha,
                c_gamma: self.c_gamma,
            }];
        }
        let mut out = self.groups.clone();
        out.sort_by_key(|g| g.start);
        let mut covered = 0usize;
        let mut filled = Vec::new();
        for g in out {
            if g.start > covered {
                filled.push(ParamGroup {
                    start: covered,
                    end: g.start,
                    c_alpha: self.c_alpha,
                    c_gamma: self.c_gamma,
                });
            }
            covered = g.end;
            filled.push(g);
        }
        if covered < p {
            filled.push(ParamGroup {
                start: covered,
                end: p,
                c_alpha: self.c_alpha,
                c_gamma: self.c_gamma,
            });
        }
        filled
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        let positive = [
            ("c_alpha", self.c_alpha),
            ("c_beta", self.c_beta),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("xi", self.xi),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.c_beta >= 1.0 {
            return Err(Error::Config(format!(
                "c_beta must be < 1, got {}",
                self.c_beta
            )));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::Config(format!(
                "mu must lie in (0,1), got {}",
                self.mu
            )));
        }
        if self.c_gamma < 0.0 || self.c_gamma * self.mu >= 1.0 {
            return Err(Error::Config(format!(
                "c_gamma must satisfy 0 <= c_gamma and c_gamma*mu < 1, got {}",
                self.c_gamma
            )));
        }
        if self.d_t < 1 || self.d_t > n {
            return Err(Error::Config(format!(
                "d_t must lie in [1, n={n}], got {}",
                self.d_t
            )));
        }
        if self.chunks < 1 || self.chunks > n {
            return Err(Error::Config(format!(
                "chunks must lie in [1, n={n}], got {}",
                self.chunks
            )));
        }
        if self.iters < 1 {
            return Err(Error::Config("iters must be >= 1".into()));
        }
        let groups = self.resolved_groups(p);
        let mut end = 0usize;
        for g in &groups {
            if g.start != end || g.end > p || g.start >= g.end {
                return Err(Error::Config(format!(
                    "parameter groups must tile [0, {p}) without overlap; offending group {}..{}",
                    g.start, g.end
                )));
            }
            end = g.end;
            if !g.c_alpha.is_finite()
                || g.c_alpha <= 0.0
                || g.c_gamma < 0.0
                || g.c_gamma * self.mu >= 1.0
            {
                return Err(Error::Config(format!(
                    "group {}..{} has invalid constants",
                    g.start, g.end
                )));
            }
            // γ₂ must stay inside (0,1) for the whole horizon
            for t in 1..=self.iters {
                let (_, g2) = gammas(t, g.c_alpha, g.c_gamma, self.mu);
                if !(g2 > 0.0 && g2 < 1.0) {
                    return Err(Error::Config(format!(
                        "gamma2 leaves (0,1) at t={t} for group {}..{} (value {g2})",
                        g.start, g.end
                    )));
                }
            }
        }
        if end != p {
            return Err(Error::Config(format!(
                "parameter groups must cover all {p} parameters"
            )));
        }
        Ok(())
    }
}
