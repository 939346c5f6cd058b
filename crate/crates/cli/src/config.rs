//! Run configuration: a TOML file with nested sections mirroring the
//! schedule and model fields. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use civi_core::diffcore::mlp::Activation;
use civi_core::sivi::CovShape;
use civi_core::solver::{OutputMode, ParamGroup, ScheduleConfig, SketchModeCfg};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Toy,
    Blr,
    BiasRate,
    Gradcheck,
    Recurrence,
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Experiment::Toy => "toy",
            Experiment::Blr => "blr",
            Experiment::BiasRate => "bias-rate",
            Experiment::Gradcheck => "gradcheck",
            Experiment::Recurrence => "recurrence",
        };
        write!(f, "{s}")
    }
}

/// Schedule section; mirrors the solver's `ScheduleConfig` with optional
/// convenience overrides for the covariance-factor parameter group.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub c_alpha: f64,
    pub c_beta: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c_gamma: f64,
    pub mu: f64,
    #[serde(default = "default_xi")]
    pub xi: f64,
    pub d_t: usize,
    #[serde(default = "default_chunks")]
    pub chunks: usize,
    pub iters: usize,
    #[serde(default = "default_true")]
    pub constant_batches: bool,
    #[serde(default = "default_sketch")]
    pub sketch: SketchModeCfg,
    #[serde(default = "default_output")]
    pub output: OutputMode,
    /// C_α override for the covariance-factor parameters θ₂.
    #[serde(default)]
    pub theta2_c_alpha: Option<f64>,
    /// C_γ override for θ₂.
    #[serde(default)]
    pub theta2_c_gamma: Option<f64>,
    #[serde(default)]
    pub groups: Vec<GroupSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSection {
    pub start: usize,
    pub end: usize,
    pub c_alpha: f64,
    pub c_gamma: f64,
}

fn default_xi() -> f64 {
    1e-8
}
fn default_chunks() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_sketch() -> SketchModeCfg {
    SketchModeCfg::SparseNonzero
}
fn default_output() -> OutputMode {
    OutputMode::UniformSample
}

impl ScheduleSection {
    /// Resolve into the solver config. θ₂ overrides become a parameter
    /// group over `[theta2_offset, p)`.
    pub fn resolve(&self, theta2_offset: usize, p: usize) -> ScheduleConfig {
        let mut groups: Vec<ParamGroup> = self
            .groups
            .iter()
            .map(|g| ParamGroup {
                start: g.start,
                end: g.end,
                c_alpha: g.c_alpha,
                c_gamma: g.c_gamma,
            })
            .collect();
        if self.theta2_c_alpha.is_some() || self.theta2_c_gamma.is_some() {
            groups.push(ParamGroup {
                start: theta2_offset,
                end: p,
                c_alpha: self.theta2_c_alpha.unwrap_or(self.c_alpha),
                c_gamma: self.theta2_c_gamma.unwrap_or(self.c_gamma),
            });
        }
        ScheduleConfig {
            c_alpha: self.c_alpha,
            c_beta: self.c_beta,
            c1: self.c1,
            c2: self.c2,
            c3: self.c3,
            c_gamma: self.c_gamma,
            mu: self.mu,
            xi: self.xi,
            d_t: self.d_t,
            chunks: self.chunks,
            iters: self.iters,
            constant_batches: self.constant_batches,
            sketch: self.sketch,
            output: self.output,
            groups,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_eps_dim")]
    pub eps_dim: usize,
    #[serde(default = "default_mixing")]
    pub mixing_variance: f64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_cov")]
    pub cov: CovShape,
    #[serde(default)]
    pub log_std_init: f64,
}

fn default_eps_dim() -> usize {
    3
}
fn default_mixing() -> f64 {
    1.0
}
fn default_hidden() -> Vec<usize> {
    vec![50, 50]
}
fn default_activation() -> Activation {
    Activation::Relu
}
fn default_cov() -> CovShape {
    CovShape::Diag
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            eps_dim: default_eps_dim(),
            mixing_variance: default_mixing(),
            hidden: default_hidden(),
            activation: default_activation(),
            cov: default_cov(),
            log_std_init: 0.0,
        }
    }
}

/// Recurrence-case parameters (only read by the `recurrence` experiment).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurrenceSection {
    pub c_eta: f64,
    pub c_zeta: f64,
    pub a: f64,
    pub b: f64,
    pub c1: f64,
    pub c2: f64,
    pub a1: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    /// Toy target name: two-modal | star | banana.
    #[serde(default)]
    pub target: Option<String>,
    /// BLR dataset CSV path.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    /// Pool size n.
    #[serde(default = "default_pool")]
    pub n: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub deterministic: bool,
    /// Samples drawn for posterior dumps and KL estimates.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Repetitions for the bias-rate study.
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    /// Metropolis steps for the BLR comparison oracle.
    #[serde(default = "default_mcmc_steps")]
    pub mcmc_steps: usize,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub recurrence: Option<RecurrenceSection>,
}

fn default_pool() -> usize {
    1024
}
fn default_eval_samples() -> usize {
    10_000
}
fn default_reps() -> usize {
    50
}
fn default_mcmc_steps() -> usize {
    1_000_000
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(format!("config parse: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Built-in defaults for the toy experiment (two-modal settings).
pub fn default_toy_config() -> RunConfig {
    RunConfig {
        experiment: Experiment::Toy,
        target: Some("two-modal".into()),
        dataset: None,
        seed: 1,
        n: 1024,
        out: None,
        deterministic: false,
        eval_samples: 10_000,
        repetitions: 50,
        mcmc_steps: 1_000_000,
        schedule: ScheduleSection {
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
            output: OutputMode::FinalIterate,
            theta2_c_alpha: None,
            theta2_c_gamma: None,
            groups: Vec::new(),
        },
        model: ModelSection::default(),
        recurrence: None,
    }
}

/// Built-in defaults for Bayesian logistic regression (named-dataset
/// settings: wide mixing, full Cholesky factor, per-group constants).
pub fn default_blr_config() -> RunConfig {
    let mut cfg = default_toy_config();
    cfg.experiment = Experiment::Blr;
    cfg.target = None;
    cfg.n = 256;
    cfg.schedule.c_alpha = 1.5e-4;
    cfg.schedule.c_beta = 0.999;
    cfg.schedule.c1 = 50.0;
    cfg.schedule.c2 = 500.0;
    cfg.schedule.c3 = 50.0;
    cfg.schedule.c_gamma = 0.7;
    cfg.schedule.iters = 600;
    cfg.schedule.theta2_c_alpha = Some(0.02);
    cfg.schedule.theta2_c_gamma = Some(0.6);
    cfg.model = ModelSection {
        eps_dim: 3,
        mixing_variance: 100.0,
        hidden: vec![200, 200],
        activation: Activation::Relu,
        cov: CovShape::Cholesky,
        log_std_init: 0.0,
    };
    cfg
}

/// Built-in defaults for the bias-decay study (growing batch schedules
/// on the lognormal fixture).
pub fn default_bias_config() -> RunConfig {
    let mut cfg = default_toy_config();
    cfg.experiment = Experiment::BiasRate;
    cfg.target = None;
    cfg.n = 8;
    cfg.repetitions = 50;
    cfg.schedule.c_alpha = 0.02;
    cfg.schedule.c_beta = 0.9;
    cfg.schedule.c1 = 1.0;
    cfg.schedule.c2 = 1.0;
    cfg.schedule.c3 = 1.0;
    cfg.schedule.d_t = 8;
    cfg.schedule.iters = 10_000;
    cfg.schedule.constant_batches = false;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "toy"
target = "two-modal"
seed = 1
[schedule]
c_alpha = 3e-4
c_beta = 0.99
c1 = 100
c2 = 1000
c3 = 100
c_gamma = 0.9
mu = 0.999
d_t = 64
iters = 200
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.experiment, Experiment::Toy);
        assert_eq!(cfg.n, 1024);
        assert_eq!(cfg.schedule.chunks, 1);
        assert!(cfg.schedule.constant_batches);
        assert_eq!(cfg.model.hidden, vec![50, 50]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}\nmystery_knob = 3\n");
        assert!(RunConfig::from_toml(&bad).is_err());
        let bad_nested = MINIMAL.replace("iters = 200", "iters = 200\nwarmup = 5");
        assert!(RunConfig::from_toml(&bad_nested).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.schedule.c_alpha, cfg.schedule.c_alpha);
    }

    #[test]
    fn theta2_override_becomes_a_group() {
        let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.schedule.theta2_c_alpha = Some(0.2);
        let resolved = cfg.schedule.resolve(90, 100);
        assert_eq!(resolved.groups.len(), 1);
        assert_eq!(resolved.groups[0].start, 90);
        assert_eq!(resolved.groups[0].c_alpha, 0.2);
        assert_eq!(resolved.groups[0].c_gamma, 0.9);
    }
}
