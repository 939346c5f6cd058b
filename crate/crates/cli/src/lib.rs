//! Experiment harness: configuration, drivers, reference oracles, and
//! artifact output for the compositional SIVI solver.

pub mod config;
pub mod experiments;
pub mod mcmc;
pub mod output;
pub mod stats;

pub use config::{Experiment, RunConfig};
pub use experiments::{
    run_bias_rate, run_blr, run_gradcheck, run_recurrence, run_toy, BiasRateOutcome, BlrOutcome,
    GradcheckReport, RecurrenceVerdict, ToyOutcome,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] civi_core::Error),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("run diverged at iteration {t} ({cause}); checkpoint written to {checkpoint}")]
    Diverged {
        t: usize,
        cause: String,
        checkpoint: String,
    },
}
