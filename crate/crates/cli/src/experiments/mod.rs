//! Experiment drivers. Each driver consumes a resolved [`RunConfig`],
//! writes its artifacts (plus a manifest) into an output directory, and
//! returns a summary the caller can assert on or print.

mod bias_rate;
mod blr;
mod gradcheck;
mod recurrence;
mod toy;

pub use bias_rate::{run_bias_rate, BiasRateOutcome};
pub use blr::{run_blr, BlrOutcome};
pub use gradcheck::{run_gradcheck, GradcheckReport};
pub use recurrence::{run_recurrence, RecurrenceVerdict};
pub use toy::{kl_estimate, run_toy, sample_posterior, ToyOutcome};

use std::path::Path;

use civi_core::diffcore::mlp::MlpSpec;
use civi_core::sivi::SemiImplicitModel;
use civi_core::solver::{Checkpoint, RunOutput, ScheduleConfig};

use crate::config::{ModelSection, RunConfig};
use crate::HarnessError;

/// Build the hierarchical model for a given latent dimension from the
/// config's model section.
pub(crate) fn build_model(
    section: &ModelSection,
    z_dim: usize,
) -> Result<SemiImplicitModel, HarnessError> {
    let mut widths = Vec::with_capacity(section.hidden.len() + 2);
    widths.push(section.eps_dim);
    widths.extend(&section.hidden);
    widths.push(z_dim);
    let net = MlpSpec::new(widths, section.activation)?;
    Ok(SemiImplicitModel::new(
        section.eps_dim,
        z_dim,
        section.mixing_variance,
        net,
        section.cov,
    )?)
}

/// Run the solver, converting an abort into a divergence report with the
/// serialized last-good checkpoint written next to the other artifacts.
pub(crate) fn run_or_dump(
    problem: &civi_core::composition::CompositionalProblem,
    theta0: &[f64],
    sched: &ScheduleConfig,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<RunOutput, HarnessError> {
    match civi_core::solver::run(problem, theta0, sched, cfg.seed, !cfg.deterministic, None) {
        Ok(out) => Ok(out),
        Err(civi_core::Error::Aborted {
            t,
            source,
            checkpoint,
        }) => {
            let path = out_dir.join("abort_checkpoint.json");
            std::fs::write(&path, &checkpoint)?;
            // checkpoint is valid JSON by construction
            let _ = Checkpoint::from_json(&checkpoint);
            Err(HarnessError::Diverged {
                t,
                cause: source.to_string(),
                checkpoint: path.display().to_string(),
            })
        }
        Err(e) => Err(e.into()),
    }
}
