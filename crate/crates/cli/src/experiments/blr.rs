//! Bayesian logistic regression: train the semi-implicit posterior and
//! compare per-coordinate moments against a long-run Metropolis oracle.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use civi_core::sivi::{build_pool, make_compositional, BlrDataset, TargetDensity};

use crate::config::RunConfig;
use crate::mcmc::metropolis;
use crate::output::{ensure_dir, write_samples, write_trajectory, Manifest};
use crate::stats::mean_std;
use crate::HarnessError;

#[derive(Debug, Clone)]
pub struct BlrOutcome {
    pub vi_mean: Vec<f64>,
    pub vi_std: Vec<f64>,
    pub mcmc_mean: Vec<f64>,
    pub mcmc_std: Vec<f64>,
    pub mcmc_acceptance: f64,
    pub mcmc_warning: bool,
    pub wall_s: f64,
    pub theta: Vec<f64>,
}

pub fn run_blr(cfg: &RunConfig, out_dir: &Path) -> Result<BlrOutcome, HarnessError> {
    let out_dir = ensure_dir(out_dir)?;
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| HarnessError::Config("blr experiment needs a dataset CSV".into()))?;
    let dataset = Arc::new(BlrDataset::load_csv(path, true)?);
    let d = dataset.dim();

    let model = super::build_model(&cfg.model, d)?;
    let target = TargetDensity::Blr(dataset.clone());
    let theta0 = model.init_params(cfg.seed, cfg.model.log_std_init);
    let pool = build_pool(&model, cfg.n, cfg.seed)?;
    let problem = make_compositional(model.clone(), pool, target)?;
    let sched = cfg
        .schedule
        .resolve(model.theta2_offset(), model.param_count());

    let start = std::time::Instant::now();
    let out = super::run_or_dump(&problem, &theta0, &sched, cfg, &out_dir)?;
    let wall_s = start.elapsed().as_secs_f64();
    let theta = out.theta_out.clone();

    let samples = super::toy::sample_posterior(&model, &theta, cfg.eval_samples, cfg.seed, 3)?;
    let (vi_mean, vi_std) = mean_std(&samples);

    let ds = dataset.clone();
    let chain = metropolis(
        move |z| ds.log_joint(z),
        &vec![0.0; d],
        cfg.mcmc_steps,
        10_000,
        cfg.seed ^ 0x5eed,
    );
    let (mcmc_mean, mcmc_std) = mean_std(&chain.samples);

    write_trajectory(&out_dir.join("trajectory.csv"), &out.trajectory)?;
    write_samples(&out_dir.join("posterior_samples.csv"), &samples)?;
    write_samples(&out_dir.join("mcmc_samples.csv"), &chain.samples)?;
    Manifest::new(cfg).save(&out_dir.join("manifest.toml"))?;

    let mut report = std::fs::File::create(out_dir.join("comparison.csv"))?;
    writeln!(report, "coord,vi_mean,vi_std,mcmc_mean,mcmc_std")?;
    for c in 0..d {
        writeln!(
            report,
            "{c},{},{},{},{}",
            vi_mean[c], vi_std[c], mcmc_mean[c], mcmc_std[c]
        )?;
    }
    if chain.acceptance_warning {
        writeln!(
            report,
            "# warning: metropolis acceptance {} outside [0.05, 0.7]",
            chain.acceptance
        )?;
    }

    Ok(BlrOutcome {
        vi_mean,
        vi_std,
        mcmc_mean,
        mcmc_std,
        mcmc_acceptance: chain.acceptance,
        mcmc_warning: chain.acceptance_warning,
        wall_s,
        theta,
    })
}
