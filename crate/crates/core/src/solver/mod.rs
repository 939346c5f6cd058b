//! The compositional solver: ADAM-style primary updates driven by sketched
//! nested-expectation gradients, with an extrapolation-smoothing auxiliary
//! step that tracks the inner expectation in log-domain.

pub mod schedule;
pub mod smoothing;

pub use schedule::{
    alpha, gammas, schedule, OutputMode, ParamGroup, ScheduleConfig, SketchModeCfg, StepSchedule,
};
pub use smoothing::{chunk_rotate, log_add_exp, smooth_update_log, ChunkState};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::composition::{oracle_g, sample_outer_indices, Cols, CompositionalProblem, FBatch};
use crate::error::{Error, Result};
use crate::rng::{stream, StreamId};
use crate::sketch::{log_scale_combine, sample_subset, sketch_gradient_with_subset};

/// Bit-pattern (de)serialization for float vectors that may hold ±∞,
/// which plain JSON numbers cannot round-trip.
mod f64_bits {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.to_bits()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let bits: Vec<u64> = Vec::deserialize(d)?;
        Ok(bits.into_iter().map(f64::from_bits).collect())
    }
}

/// Full optimizer state; serializing it (plus the run seed) is enough to
/// resume bit-exactly in serial mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerState {
    pub theta: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
    #[serde(with = "f64_bits")]
    pub log_y: Vec<f64>,
    /// Completed iterations.
    pub t: usize,
    pub chunk: ChunkState,
    /// Reservoir sample over post-update iterates.
    pub reservoir: Option<Vec<f64>>,
}

impl OptimizerState {
    pub fn init(theta: &[f64], n: usize, chunks: usize) -> Self {
        OptimizerState {
            theta: theta.to_vec(),
            m: vec![0.0; theta.len()],
            v: vec![0.0; theta.len()],
            z: theta.to_vec(),
            log_y: vec![f64::NEG_INFINITY; n],
            t: 0,
            chunk: ChunkState::new(n, chunks),
            reservoir: None,
        }
    }
}

/// Versioned checkpoint: a textual dump sufficient for bit-exact resume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub state: OptimizerState,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    pub fn new(seed: u64, state: OptimizerState) -> Self {
        Checkpoint {
            version: Self::VERSION,
            seed,
            state,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("bad checkpoint: {e}")))?;
        if ck.version != Self::VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} not supported",
                ck.version
            )));
        }
        Ok(ck)
    }
}

/// One trajectory row. `bias` is filled when a reference observer is active.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub alpha: f64,
    pub wall_ms: f64,
    pub bias: Option<f64>,
}

/// Per-step view handed to an observer; returning Some(b) records a bias
/// column entry.
pub struct StepInfo<'a> {
    pub t: usize,
    /// θ_t, before the primary update.
    pub theta: &'a [f64],
    pub grad_estimate: &'a [f64],
    pub log_y: &'a [f64],
}

pub type Observer<'a> = dyn FnMut(&StepInfo) -> Option<f64> + 'a;

/// ADAM-style moment and parameter update over per-group schedules.
/// `sched` carries (range, α, γ₁, γ₂) per group tiling the parameters.
pub fn primary_update_grouped(
    state: &mut OptimizerState,
    grad: &[f64],
    sched: &[(std::ops::Range<usize>, f64, f64, f64)],
    xi: f64,
    t: usize,
) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { t });
    }
    for (range, a, g1, g2) in sched {
        for i in range.clone() {
            let g = grad[i];
            state.m[i] = g1 * state.m[i] + (1.0 - g1) * g;
            state.v[i] = g2 * state.v[i] + (1.0 - g2) * g * g;
            let m = state.m[i];
            if m != 0.0 {
                state.theta[i] -= a * m / (state.v[i].sqrt() + xi);
            }
        }
    }
    Ok(())
}

/// Single-group form of the primary update.
pub fn primary_update(
    state: &mut OptimizerState,
    grad: &[f64],
    alpha: f64,
    gamma1: f64,
    gamma2: f64,
    xi: f64,
) -> Result<()> {
    let p = state.theta.len();
    primary_update_grouped(
        state,
        grad,
        &[(0..p, alpha, gamma1, gamma2)],
        xi,
        state.t + 1,
    )
}

/// z_{t+1} = (1 − 1/β)θ_t + (1/β)θ_{t+1}; the inverse identity
/// θ_{t+1} = (1−β)θ_t + β·z_{t+1} holds exactly.
pub fn extrapolate(theta_t: &[f64], theta_next: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!(
            "extrapolation beta must lie in (0, 1], got {beta}"
        )));
    }
    let inv = 1.0 / beta;
    Ok(theta_t
        .iter()
        .zip(theta_next)
        .map(|(&a, &b)| (1.0 - inv) * a + inv * b)
        .collect())
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub theta_out: Vec<f64>,
    pub theta_final: Vec<f64>,
    pub trajectory: Vec<TrajectoryRecord>,
    pub state: OptimizerState,
}

/// Run the solver from a fresh state.
pub fn run(
    problem: &CompositionalProblem,
    theta_init: &[f64],
    cfg: &ScheduleConfig,
    seed: u64,
    record_wall: bool,
    observer: Option<&mut Observer>,
) -> Result<RunOutput> {
    let state = OptimizerState::init(theta_init, problem.pool_size(), cfg.chunks);
    run_from(problem, state, cfg, seed, record_wall, observer)
}

/// Run (or resume) the solver to the full horizon. `state.t` names the
/// last completed iteration.
pub fn run_from(
    problem: &CompositionalProblem,
    state: OptimizerState,
    cfg: &ScheduleConfig,
    seed: u64,
    record_wall: bool,
    observer: Option<&mut Observer>,
) -> Result<RunOutput> {
    run_segment(problem, state, cfg, seed, record_wall, observer, usize::MAX)
}

/// Run at most until iteration `stop_after` (inclusive), under the full
/// horizon's schedules. A segment checkpointed and resumed with the same
/// config reproduces an uninterrupted run bit-exactly.
pub fn run_segment(
    problem: &CompositionalProblem,
    mut state: OptimizerState,
    cfg: &ScheduleConfig,
    seed: u64,
    record_wall: bool,
    mut observer: Option<&mut Observer>,
    stop_after: usize,
) -> Result<RunOutput> {
    let n = problem.pool_size();
    let p = problem.param_dim();
    cfg.validate(n, p)?;
    if state.theta.len() != p {
        return Err(Error::dim("initial parameters", p, state.theta.len()));
    }
    let groups = cfg.resolved_groups(p);
    let rotation_period = cfg.iters.div_ceil(cfg.chunks * 4);
    let mut trajectory = Vec::with_capacity(cfg.iters.saturating_sub(state.t));

    let start_t = state.t + 1;
    for t in start_t..=cfg.iters.min(stop_after) {
        let step_start = std::time::Instant::now();
        match iterate(
            problem,
            &mut state,
            cfg,
            &groups,
            seed,
            t,
            rotation_period,
            &mut observer,
        ) {
            Ok(mut rec) => {
                if record_wall {
                    rec.wall_ms = step_start.elapsed().as_secs_f64() * 1e3;
                }
                trajectory.push(rec);
                state.t = t;
            }
            Err(e) => {
                let checkpoint = Checkpoint::new(seed, state).to_json();
                return Err(Error::Aborted {
                    t,
                    source: Box::new(e),
                    checkpoint,
                });
            }
        }
    }

    let theta_out = match cfg.output {
        OutputMode::UniformSample => state
            .reservoir
            .clone()
            .unwrap_or_else(|| state.theta.clone()),
        OutputMode::FinalIterate => state.theta.clone(),
    };
    Ok(RunOutput {
        theta_out,
        theta_final: state.theta.clone(),
        trajectory,
        state,
    })
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    problem: &CompositionalProblem,
    state: &mut OptimizerState,
    cfg: &ScheduleConfig,
    groups: &[ParamGroup],
    seed: u64,
    t: usize,
    rotation_period: usize,
    observer: &mut Option<&mut Observer>,
) -> Result<TrajectoryRecord> {
    let sched = schedule(t, cfg);
    let tu = t as u64;

    // Occasional chunk switch: re-initialize the incoming chunk's log-y
    // from a fresh estimate of log ḡ(z_t).
    if t > 1 && (t - 1).is_multiple_of(rotation_period) {
        let next = (state.chunk.active + 1) % state.chunk.chunks;
        let range = state.chunk.range_of(next);
        let cols: Vec<usize> = range.collect();
        let mut rng = stream(seed, tu, StreamId::RotateDraws);
        let fresh = oracle_g(problem, &state.z, sched.k3, Cols::Subset(cols), &mut rng)?;
        chunk_rotate(&mut state.chunk, &mut state.log_y, fresh.log_mean())?;
    }

    let chunk_range = state.chunk.active_range();

    // ---- Gradients ----
    let mut f_rng = stream(seed, tu, StreamId::OuterIndices);
    let indices = sample_outer_indices(chunk_range.start, chunk_range.len(), sched.k1, &mut f_rng);
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &i in &indices {
        match counts.binary_search_by_key(&i, |p| p.0) {
            Ok(pos) => counts[pos].1 += 1,
            Err(pos) => counts.insert(pos, (i, 1)),
        }
    }
    let support: Vec<usize> = counts.iter().map(|&(c, _)| c).collect();

    // Column selection happens before any values are evaluated, so the
    // g-oracle only touches what the estimator will read.
    let mut sk_rng = stream(seed, tu, StreamId::SketchSubset);
    let (value_cols, sketch_cols) = match cfg.sketch {
        SketchModeCfg::SparseNonzero => {
            let chosen = if cfg.d_t < support.len() {
                let mut s = sample_subset(&support, cfg.d_t, &mut sk_rng);
                s.sort_unstable();
                s
            } else {
                support.clone()
            };
            (chosen.clone(), chosen)
        }
        SketchModeCfg::UniformSubset => {
            let all: Vec<usize> = (0..problem.pool_size()).collect();
            let mut s = sample_subset(&all, cfg.d_t.min(all.len()), &mut sk_rng);
            s.sort_unstable();
            let hit: Vec<usize> = s
                .iter()
                .cloned()
                .filter(|c| support.binary_search(c).is_ok())
                .collect();
            (hit, s)
        }
    };
    let eval_cols = if t == 1 {
        // first iteration also initializes log-y at every sampled index
        let mut u = value_cols.clone();
        for &c in &support {
            if let Err(pos) = u.binary_search(&c) {
                u.insert(pos, c);
            }
        }
        u
    } else {
        value_cols.clone()
    };

    let mut g_rng = stream(seed, tu, StreamId::GradDraws);
    let gbatch = oracle_g(
        problem,
        &state.theta,
        sched.k2,
        Cols::Subset(eval_cols),
        &mut g_rng,
    )?;

    if t == 1 {
        // y₁ is undefined by construction; seed the sampled entries with the
        // first gradient batch's log ḡ(θ₁) so ∇f(y₁) is well-posed, and let
        // the β₁ = 1 auxiliary step below make y₂ = ḡ(z₂) exactly.
        for (&c, &lm) in gbatch.cols().iter().zip(gbatch.log_mean()) {
            state.log_y[c] = lm;
        }
    }

    let fbatch = FBatch::from_indices(indices, &state.log_y)?;
    let loss: f64 = fbatch.indices.iter().map(|&i| state.log_y[i]).sum::<f64>() / sched.k1 as f64;

    let grad = match cfg.sketch {
        SketchModeCfg::SparseNonzero => {
            let log_gbar: Vec<(usize, f64)> = value_cols
                .iter()
                .map(|&c| (c, gbatch.log_mean_at(c)))
                .collect();
            let restricted: Vec<(usize, usize)> = counts
                .iter()
                .cloned()
                .filter(|(c, _)| value_cols.binary_search(c).is_ok())
                .collect();
            let k = log_scale_combine(&log_gbar, &state.log_y, &restricted, sched.k1)?;
            let scale = support.len() as f64 / value_cols.len().max(1) as f64;
            let coeffs: Vec<(usize, f64)> = k
                .entries
                .iter()
                .map(|&(c, log_k)| (c, scale * log_k.exp()))
                .collect();
            if coeffs.is_empty() {
                vec![0.0; problem.param_dim()]
            } else {
                gbatch.contract_log_mean(&coeffs)?
            }
        }
        SketchModeCfg::UniformSubset => {
            sketch_gradient_with_subset(&fbatch, &gbatch, &sketch_cols)?
        }
    };

    if let Some(obs) = observer.as_mut() {
        let info = StepInfo {
            t,
            theta: &state.theta,
            grad_estimate: &grad,
            log_y: &state.log_y,
        };
        let bias = obs(&info);
        return finish_step(
            problem, state, cfg, groups, seed, t, &sched, &grad, loss, bias,
        );
    }
    finish_step(
        problem, state, cfg, groups, seed, t, &sched, &grad, loss, None,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish_step(
    problem: &CompositionalProblem,
    state: &mut OptimizerState,
    cfg: &ScheduleConfig,
    groups: &[ParamGroup],
    seed: u64,
    t: usize,
    sched: &StepSchedule,
    grad: &[f64],
    loss: f64,
    bias: Option<f64>,
) -> Result<TrajectoryRecord> {
    let tu = t as u64;
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();

    // ---- Primary update ----
    let theta_prev = state.theta.clone();
    let group_sched: Vec<(std::ops::Range<usize>, f64, f64, f64)> = groups
        .iter()
        .map(|g| {
            let (g1, g2) = gammas(t, g.c_alpha, g.c_gamma, cfg.mu);
            (g.start..g.end, alpha(t, g.c_alpha), g1, g2)
        })
        .collect();
    primary_update_grouped(state, grad, &group_sched, cfg.xi, t)?;

    // ---- Auxiliary update ----
    // β₁ = 1: the first smoothing step copies ḡ(z₂) so no stale y is mixed in.
    let beta = if t == 1 { 1.0 } else { sched.beta };
    state.z = extrapolate(&theta_prev, &state.theta, beta)?;

    let chunk_range = state.chunk.active_range();
    let cols: Vec<usize> = chunk_range.clone().collect();
    let mut s_rng = stream(seed, tu, StreamId::SmoothDraws);
    let smooth = oracle_g(problem, &state.z, sched.k3, Cols::Subset(cols), &mut s_rng)?;
    smooth_update_log(&mut state.log_y[chunk_range], smooth.log_mean(), beta)?;

    // ---- Output reservoir over post-update iterates ----
    if cfg.output == OutputMode::UniformSample {
        let mut r_rng = stream(seed, tu, StreamId::Reservoir);
        if t == 1 || r_rng.gen::<f64>() < 1.0 / t as f64 {
            state.reservoir = Some(state.theta.clone());
        }
    }

    Ok(TrajectoryRecord {
        t,
        loss,
        grad_norm,
        alpha: sched.alpha,
        wall_ms: 0.0,
        bias,
    })
}
