//! Gradient-bias decay study on the linear-lognormal fixture, whose exact
//! loss gradient is available in closed form. Repeated runs record the
//! squared error of the solver's own gradient estimate at log-spaced
//! checkpoints; the report fits a log-log slope.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use civi_core::fixtures::Lognormal;
use civi_core::rng::{stream, StreamId};
use civi_core::solver::{run as solver_run, StepInfo};

use crate::config::RunConfig;
use crate::output::{ensure_dir, write_trajectory, Manifest};
use crate::stats::ols_slope;
use crate::HarnessError;

#[derive(Debug, Clone)]
pub struct BiasRateOutcome {
    /// OLS slope of log mean-squared-error against log t.
    pub slope: f64,
    pub slope_se: f64,
    /// (checkpoint t, mean squared gradient error over repetitions).
    pub checkpoints: Vec<(usize, f64)>,
}

pub const CHECKPOINTS: [usize; 4] = [10, 100, 1_000, 10_000];

pub fn run_bias_rate(cfg: &RunConfig, out_dir: &Path) -> Result<BiasRateOutcome, HarnessError> {
    let out_dir = ensure_dir(out_dir)?;
    let mut fixture_rng = stream(cfg.seed, 0, StreamId::Scratch);
    let fixture = Lognormal::random(cfg.n, 4, 0.5, &mut fixture_rng);
    let exact = fixture.exact_gradient();
    let sched = cfg.schedule.resolve(0, 4);

    let checkpoints: Vec<usize> = CHECKPOINTS
        .iter()
        .cloned()
        .filter(|&t| t <= sched.iters)
        .collect();
    if checkpoints.len() < 2 {
        return Err(HarnessError::Config(
            "bias-rate needs iters >= 100 to cover at least two checkpoints".into(),
        ));
    }

    type RepResult =
        Result<(Vec<f64>, Option<Vec<civi_core::solver::TrajectoryRecord>>), HarnessError>;
    let reps = cfg.repetitions;
    let per_rep: Vec<RepResult> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let problem = fixture.clone().into_problem();
            let mut errors = vec![f64::NAN; checkpoints.len()];
            let mut observer = |info: &StepInfo| -> Option<f64> {
                if let Ok(slot) = checkpoints.binary_search(&info.t) {
                    let b: f64 = info
                        .grad_estimate
                        .iter()
                        .zip(&exact)
                        .map(|(&g, &e)| (g - e) * (g - e))
                        .sum();
                    errors[slot] = b;
                    return Some(b);
                }
                None
            };
            let seed = cfg.seed.wrapping_add(rep as u64 + 1);
            let out = solver_run(
                &problem,
                &[0.0; 4],
                &sched,
                seed,
                false,
                Some(&mut observer),
            )?;
            let traj = (rep == 0).then_some(out.trajectory);
            Ok((errors, traj))
        })
        .collect();

    let mut means = vec![0.0; checkpoints.len()];
    let mut first_traj = None;
    for r in per_rep {
        let (errors, traj) = r?;
        for (m, e) in means.iter_mut().zip(&errors) {
            *m += e / reps as f64;
        }
        if let Some(t) = traj {
            first_traj = Some(t);
        }
    }

    let xs: Vec<f64> = checkpoints.iter().map(|&t| (t as f64).ln()).collect();
    let ys: Vec<f64> = means.iter().map(|&m| m.ln()).collect();
    let (slope, _, slope_se) = ols_slope(&xs, &ys);

    if let Some(traj) = &first_traj {
        write_trajectory(&out_dir.join("trajectory.csv"), traj)?;
    }
    Manifest::new(cfg).save(&out_dir.join("manifest.toml"))?;
    let mut f = std::fs::File::create(out_dir.join("bias_checkpoints.csv"))?;
    writeln!(f, "t,mean_sq_error")?;
    for (&t, &m) in checkpoints.iter().zip(&means) {
        writeln!(f, "{t},{m}")?;
    }
    std::fs::write(
        out_dir.join("slope_report.toml"),
        format!(
            "slope = {slope}\nslope_se = {slope_se}\nci_low = {}\nci_high = {}\nrepetitions = {reps}\n",
            slope - 1.96 * slope_se,
            slope + 1.96 * slope_se
        ),
    )?;

    Ok(BiasRateOutcome {
        slope,
        slope_se,
        checkpoints: checkpoints.into_iter().zip(means).collect(),
    })
}
