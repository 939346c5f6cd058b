use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use civi_cli::config::{
    default_bias_config, default_blr_config, default_toy_config, Experiment, RecurrenceSection,
    RunConfig,
};
use civi_cli::output::Manifest;
use civi_cli::{run_bias_rate, run_blr, run_gradcheck, run_recurrence, run_toy, HarnessError};

#[derive(Parser)]
#[command(
    name = "civi",
    about = "Compositional semi-implicit variational inference: experiment drivers",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's iteration budget T.
    #[arg(long, global = true)]
    iters: Option<usize>,
    /// Serial deterministic mode: wall-clock columns are zeroed so re-runs
    /// reproduce artifacts byte-for-byte.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train against a closed-form 2-d toy target.
    Toy {
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out/toy")]
        out: PathBuf,
    },
    /// Train a Bayesian logistic regression posterior and compare with a
    /// long-run Metropolis chain.
    Blr {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out/blr")]
        out: PathBuf,
    },
    /// Gradient-bias decay study on the lognormal fixture.
    BiasRate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out/bias-rate")]
        out: PathBuf,
    },
    /// Sweep every differentiable operation against finite differences.
    Gradcheck,
    /// Check the decaying-recurrence bound for a case file.
    Recurrence {
        #[arg(long)]
        case: PathBuf,
    },
    /// Re-execute a run from its manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "out/rerun")]
        out: PathBuf,
    },
    /// Write a seeded synthetic logistic-regression dataset CSV.
    SynthBlr {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        rows: usize,
        /// True coefficients, comma-separated.
        #[arg(long, default_value = "1.5,-1.0")]
        coeffs: String,
    },
}

fn load_or(default: RunConfig, path: &Option<PathBuf>) -> Result<RunConfig, HarnessError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(default),
    }
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) {
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(iters) = cli.iters {
        cfg.schedule.iters = iters;
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
}

fn dispatch(cfg: &RunConfig, out: &Path) -> Result<(), HarnessError> {
    match cfg.experiment {
        Experiment::Toy => {
            let o = run_toy(cfg, out)?;
            println!(
                "toy: init KL {:.4} -> final KL {:.4} ({:.1}% drop), wall {:.2}s",
                o.init_kl,
                o.final_kl,
                100.0 * (1.0 - o.final_kl / o.init_kl),
                o.wall_s
            );
            println!(
                "  2-means centers: ({:.3}, {:.3}) and ({:.3}, {:.3})",
                o.centers[0][0], o.centers[0][1], o.centers[1][0], o.centers[1][1]
            );
        }
        Experiment::Blr => {
            let o = run_blr(cfg, out)?;
            println!(
                "blr: wall {:.2}s, metropolis acceptance {:.3}",
                o.wall_s, o.mcmc_acceptance
            );
            for c in 0..o.vi_mean.len() {
                println!(
                    "  coord {c}: posterior mean {:.4} (chain {:.4}), std {:.4} (chain {:.4})",
                    o.vi_mean[c], o.mcmc_mean[c], o.vi_std[c], o.mcmc_std[c]
                );
            }
            if o.mcmc_warning {
                println!("  warning: chain acceptance outside [0.05, 0.7]");
            }
        }
        Experiment::BiasRate => {
            let o = run_bias_rate(cfg, out)?;
            println!(
                "bias-rate: slope {:.3} (95% CI [{:.3}, {:.3}]) over checkpoints {:?}",
                o.slope,
                o.slope - 1.96 * o.slope_se,
                o.slope + 1.96 * o.slope_se,
                o.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>()
            );
        }
        Experiment::Gradcheck => {
            let report = run_gradcheck(cfg.seed)?;
            for e in &report.entries {
                println!(
                    "gradcheck {:<22} {:>4} cases, max rel err {:.3e}",
                    e.name, e.cases, e.max_rel_err
                );
            }
            println!(
                "gradcheck overall: {} ({} cases, max rel err {:.3e})",
                if report.pass() { "PASS" } else { "FAIL" },
                report.total_cases,
                report.max_rel_err
            );
            if !report.pass() {
                return Err(HarnessError::Config("gradient check failed".into()));
            }
        }
        Experiment::Recurrence => {
            let case = cfg.recurrence.as_ref().ok_or_else(|| {
                HarnessError::Config("recurrence experiment needs a [recurrence] section".into())
            })?;
            let v = run_recurrence(case)?;
            println!(
                "recurrence: bound {} (C_A {:.6}, worst A_t·t^(b-a)/C_A = {:.6} at t = {})",
                if v.holds { "HOLDS" } else { "VIOLATED" },
                v.c_a,
                v.worst_ratio,
                v.worst_t
            );
            if !v.holds {
                return Err(HarnessError::Config("recurrence bound violated".into()));
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match &cli.cmd {
        Cmd::Toy {
            target,
            config,
            out,
        } => {
            let mut cfg = load_or(default_toy_config(), config)?;
            cfg.experiment = Experiment::Toy;
            if let Some(t) = target {
                cfg.target = Some(t.clone());
            }
            apply_overrides(&mut cfg, &cli);
            dispatch(&cfg, out)
        }
        Cmd::Blr { data, config, out } => {
            let mut cfg = load_or(default_blr_config(), config)?;
            cfg.experiment = Experiment::Blr;
            if let Some(d) = data {
                cfg.dataset = Some(d.clone());
            }
            apply_overrides(&mut cfg, &cli);
            dispatch(&cfg, out)
        }
        Cmd::BiasRate { config, out } => {
            let mut cfg = load_or(default_bias_config(), config)?;
            cfg.experiment = Experiment::BiasRate;
            apply_overrides(&mut cfg, &cli);
            dispatch(&cfg, out)
        }
        Cmd::Gradcheck => {
            let mut cfg = default_toy_config();
            cfg.experiment = Experiment::Gradcheck;
            apply_overrides(&mut cfg, &cli);
            dispatch(&cfg, &PathBuf::from("out/gradcheck"))
        }
        Cmd::Recurrence { case } => {
            let text = std::fs::read_to_string(case)
                .map_err(|e| HarnessError::Config(format!("read {}: {e}", case.display())))?;
            let section: RecurrenceSection = toml::from_str(&text)
                .map_err(|e| HarnessError::Config(format!("case parse: {e}")))?;
            let mut cfg = default_toy_config();
            cfg.experiment = Experiment::Recurrence;
            cfg.recurrence = Some(section);
            apply_overrides(&mut cfg, &cli);
            dispatch(&cfg, &PathBuf::from("out/recurrence"))
        }
        Cmd::Rerun { manifest, out } => {
            let m = Manifest::load(manifest)?;
            let mut cfg = m.config;
            apply_overrides(&mut cfg, &cli);
            dispatch(&cfg, out)
        }
        Cmd::SynthBlr { out, rows, coeffs } => {
            let z_true: Vec<f64> = coeffs
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| HarnessError::Config(format!("bad coefficient {s:?}")))
                })
                .collect::<Result<_, _>>()?;
            let seed = cli.seed.unwrap_or(1);
            let mut rng = civi_core::rng::stream(seed, 0, civi_core::rng::StreamId::Scratch);
            let ds = civi_core::sivi::synthetic_dataset(&z_true, *rows, &mut rng);
            ds.write_csv(out)?;
            println!(
                "wrote {} rows of dim {} to {}",
                rows,
                z_true.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
