//! Toy-target training: minimize the divergence between the semi-implicit
//! family and one of the closed-form 2-d targets, then report
//! kernel-estimated KL values, posterior samples, and density grids.

use std::path::Path;

use civi_core::rng::{stream, StreamId};
use civi_core::sivi::{build_pool, make_compositional, SemiImplicitModel, TargetDensity, ToyKind};

use crate::config::RunConfig;
use crate::output::{ensure_dir, write_grid, write_samples, write_trajectory, Manifest};
use crate::stats::{kmeans, Kde};
use crate::HarnessError;

#[derive(Debug, Clone)]
pub struct ToyOutcome {
    pub init_kl: f64,
    pub final_kl: f64,
    /// 2-means centers of the posterior sample dump.
    pub centers: Vec<Vec<f64>>,
    pub wall_s: f64,
    pub theta: Vec<f64>,
}

pub fn parse_toy_target(name: &str) -> Result<ToyKind, HarnessError> {
    match name {
        "two-modal" => Ok(ToyKind::TwoModal),
        "star" => Ok(ToyKind::Star),
        "banana" => Ok(ToyKind::Banana),
        other => Err(HarnessError::Config(format!(
            "unknown toy target {other:?} (expected two-modal | star | banana)"
        ))),
    }
}

fn grid_box(kind: ToyKind) -> ((f64, f64), (f64, f64)) {
    match kind {
        ToyKind::TwoModal | ToyKind::Star => ((-6.0, 6.0), (-6.0, 6.0)),
        ToyKind::Banana => ((-5.0, 5.0), (-12.0, 3.0)),
    }
}

/// Draw posterior samples from the trained family.
pub fn sample_posterior(
    model: &SemiImplicitModel,
    theta: &[f64],
    count: usize,
    seed: u64,
    tag: u64,
) -> Result<Vec<Vec<f64>>, HarnessError> {
    let mut rng = stream(seed, tag, StreamId::Scratch);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(model.sample_z(theta, &mut rng)?);
    }
    Ok(out)
}

/// Monte-Carlo KL(q‖p): leave-one-out kernel estimate of the learned
/// density against the exact target log-density.
pub fn kl_estimate(
    model: &SemiImplicitModel,
    theta: &[f64],
    target: &TargetDensity,
    count: usize,
    seed: u64,
    tag: u64,
) -> Result<f64, HarnessError> {
    let samples = sample_posterior(model, theta, count, seed, tag)?;
    let kde = Kde::fit(&samples);
    Ok(kde.kl_against(|z| target.log_density(z).unwrap_or(f64::NEG_INFINITY)))
}

pub fn run_toy(cfg: &RunConfig, out_dir: &Path) -> Result<ToyOutcome, HarnessError> {
    let out_dir = ensure_dir(out_dir)?;
    let name = cfg
        .target
        .as_deref()
        .ok_or_else(|| HarnessError::Config("toy experiment needs a target".into()))?;
    let kind = parse_toy_target(name)?;
    let target = TargetDensity::toy(kind);

    let model = super::build_model(&cfg.model, 2)?;
    let theta0 = model.init_params(cfg.seed, cfg.model.log_std_init);
    let pool = build_pool(&model, cfg.n, cfg.seed)?;
    let problem = make_compositional(model.clone(), pool, target.clone())?;
    let sched = cfg
        .schedule
        .resolve(model.theta2_offset(), model.param_count());

    let init_kl = kl_estimate(&model, &theta0, &target, cfg.eval_samples, cfg.seed, 1)?;

    let start = std::time::Instant::now();
    let out = super::run_or_dump(&problem, &theta0, &sched, cfg, &out_dir)?;
    let wall_s = start.elapsed().as_secs_f64();

    let theta = out.theta_out.clone();
    let final_kl = kl_estimate(&model, &theta, &target, cfg.eval_samples, cfg.seed, 2)?;
    let samples = sample_posterior(&model, &theta, cfg.eval_samples, cfg.seed, 3)?;
    let centers = kmeans(&samples, 2, 100);

    write_trajectory(&out_dir.join("trajectory.csv"), &out.trajectory)?;
    write_samples(&out_dir.join("samples.csv"), &samples)?;
    let (bx, by) = grid_box(kind);
    let kde = Kde::fit(&samples);
    write_grid(&out_dir.join("learned_grid.csv"), bx, by, 100, |z| {
        kde.log_density(z)
    })?;
    write_grid(&out_dir.join("target_grid.csv"), bx, by, 100, |z| {
        target.log_density(z).unwrap_or(f64::NEG_INFINITY)
    })?;
    Manifest::new(cfg).save(&out_dir.join("manifest.toml"))?;

    let summary = format!(
        "init_kl = {init_kl}\nfinal_kl = {final_kl}\nwall_s = {wall_s}\ncenter0 = [{}, {}]\ncenter1 = [{}, {}]\n",
        centers[0][0], centers[0][1], centers[1][0], centers[1][1],
    );
    std::fs::write(out_dir.join("summary.toml"), summary)?;

    Ok(ToyOutcome {
        init_kl,
        final_kl,
        centers,
        wall_s,
        theta,
    })
}
