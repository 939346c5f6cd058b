//! Gradient sweep: every differentiable operation against central finite
//! differences, including the two-path ratio gradient and the full-size
//! end-to-end solver gradient.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use civi_core::composition::{oracle_g, plug_in_loss, Cols};
use civi_core::diffcore::gaussian::{logpdf_chol, logpdf_diag};
use civi_core::diffcore::mlp::{Activation, MlpSpec};
use civi_core::diffcore::tape::Tape;
use civi_core::diffcore::{central_finite_diff, max_rel_err};
use civi_core::rng::{stream, StreamId};
use civi_core::sivi::{
    build_pool, log_ratio_j, make_compositional, synthetic_dataset, CovShape, SemiImplicitModel,
    TargetDensity, ToyKind,
};
use civi_core::sketch::log_scale_combine;

use crate::HarnessError;

pub const FD_STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradcheckEntry {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub max_rel_err: f64,
    pub total_cases: usize,
}

impl GradcheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err < TOL
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

fn sweep_mlp(seed: u64) -> GradcheckEntry {
    let mut rng = stream(seed, 10, StreamId::Scratch);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 30 {
        let act = if cases % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Relu
        };
        let spec = MlpSpec::new(vec![3, 6, 4, 1], act).unwrap();
        let params = rand_vec(&mut rng, spec.param_count(), -0.8, 0.8);
        let input = rand_vec(&mut rng, 3, -1.5, 1.5);
        if act == Activation::Relu {
            // keep the difference quotient away from activation kinks
            let first = MlpSpec::new(vec![3, 6], Activation::Relu).unwrap();
            let h = first
                .forward(&params[..first.param_count()], &input)
                .unwrap();
            if h.iter().any(|v| v.abs() < 1e-3) {
                continue;
            }
        }
        let mut tape = Tape::new(&params);
        let x = tape.constv(&input);
        let out = spec.forward_on_tape(&mut tape, 0, x).unwrap();
        let s = tape.sum(out);
        let analytic = tape.backward(s).unwrap();
        let fd = central_finite_diff(
            &mut |p: &[f64]| spec.forward(p, &input).unwrap()[0],
            &params,
            FD_STEP,
        );
        worst = worst.max(max_rel_err(&analytic, &fd));
        cases += 1;
    }
    GradcheckEntry {
        name: "mlp-forward".into(),
        cases,
        max_rel_err: worst,
    }
}

fn sweep_gaussians(seed: u64) -> GradcheckEntry {
    let mut rng = stream(seed, 11, StreamId::Scratch);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..20 {
        let d = rng.gen_range(1..4usize);
        let params = rand_vec(&mut rng, 3 * d, -1.0, 1.0);
        let mut tape = Tape::new(&params);
        let x = tape.param(0, d);
        let m = tape.param(d, d);
        let ls = tape.param(2 * d, d);
        let out = tape.gauss_logpdf_diag(x, m, ls);
        let analytic = tape.backward(out).unwrap();
        let fd = central_finite_diff(
            &mut |p: &[f64]| logpdf_diag(&p[..d], &p[d..2 * d], &p[2 * d..]),
            &params,
            FD_STEP,
        );
        worst = worst.max(max_rel_err(&analytic, &fd));
        cases += 1;
    }
    for _ in 0..20 {
        let d = rng.gen_range(1..4usize);
        let pk = d * (d + 1) / 2;
        let params = rand_vec(&mut rng, 2 * d + pk, -1.0, 1.0);
        let mut tape = Tape::new(&params);
        let x = tape.param(0, d);
        let m = tape.param(d, d);
        let f = tape.param(2 * d, pk);
        let out = tape.gauss_logpdf_chol(x, m, f);
        let analytic = tape.backward(out).unwrap();
        let fd = central_finite_diff(
            &mut |p: &[f64]| {
                let mut scratch = Vec::new();
                logpdf_chol(&p[..d], &p[d..2 * d], &p[2 * d..], &mut scratch)
            },
            &params,
            FD_STEP,
        );
        worst = worst.max(max_rel_err(&analytic, &fd));
        cases += 1;
    }
    GradcheckEntry {
        name: "gaussian-logpdf".into(),
        cases,
        max_rel_err: worst,
    }
}

fn sweep_targets(seed: u64) -> GradcheckEntry {
    let mut rng = stream(seed, 12, StreamId::Scratch);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut drng = stream(seed, 13, StreamId::Scratch);
    let ds = Arc::new(synthetic_dataset(&[0.8, -1.2], 25, &mut drng));
    let targets = [
        TargetDensity::toy(ToyKind::TwoModal),
        TargetDensity::toy(ToyKind::Star),
        TargetDensity::toy(ToyKind::Banana),
        TargetDensity::Blr(ds),
    ];
    for t in &targets {
        for _ in 0..8 {
            let z = rand_vec(&mut rng, 2, -2.0, 2.0);
            let mut tape = Tape::new(&z);
            let zv = tape.param(0, 2);
            let out = t.emit(&mut tape, zv);
            let analytic = tape.backward(out).unwrap();
            let fd = central_finite_diff(&mut |p: &[f64]| t.log_density(p).unwrap(), &z, FD_STEP);
            worst = worst.max(max_rel_err(&analytic, &fd));
            cases += 1;
        }
    }
    GradcheckEntry {
        name: "target-densities".into(),
        cases,
        max_rel_err: worst,
    }
}

fn ratio_model(seed: u64, cov: CovShape) -> (SemiImplicitModel, Vec<f64>) {
    let net = MlpSpec::new(vec![3, 8, 2], Activation::Tanh).unwrap();
    let model = SemiImplicitModel::new(3, 2, 1.0, net, cov).unwrap();
    let theta = model.init_params(seed, -0.2);
    (model, theta)
}

fn sweep_log_ratio(seed: u64) -> GradcheckEntry {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for cov in [CovShape::Diag, CovShape::Cholesky] {
        let (model, theta) = ratio_model(seed, cov);
        let pool = build_pool(&model, 4, seed ^ 1).unwrap();
        let target = TargetDensity::toy(ToyKind::TwoModal);
        let problem = make_compositional(model.clone(), pool.clone(), target.clone()).unwrap();
        let mut rng = stream(seed, 14, StreamId::Scratch);
        for j in 0..pool.len() {
            let eps_hat = model.sample_eps(&mut rng);
            let analytic = problem.inner().grad_log_g_col(&theta, &eps_hat, j).unwrap();
            let fd = central_finite_diff(
                &mut |p: &[f64]| log_ratio_j(&model, p, &pool, j, &eps_hat, &target).unwrap(),
                &theta,
                FD_STEP,
            );
            worst = worst.max(max_rel_err(&analytic, &fd));
            cases += 1;
        }
    }
    GradcheckEntry {
        name: "log-ratio-two-paths".into(),
        cases,
        max_rel_err: worst,
    }
}

/// Full-pipeline gradient at d_t = n against finite differences of the
/// plug-in loss under common random numbers: with y pinned to ḡ(θ) the
/// combined sparse weights collapse to 1/n, so the solver's estimator is
/// the exact gradient of (1/n) Σ_ν log ḡ_ν(θ).
fn sweep_end_to_end(seed: u64) -> GradcheckEntry {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for case in 0..4u64 {
        let cov = if case % 2 == 0 {
            CovShape::Diag
        } else {
            CovShape::Cholesky
        };
        let net = MlpSpec::new(vec![2, 5, 2], Activation::Tanh).unwrap();
        let model = SemiImplicitModel::new(2, 2, 1.0, net, cov).unwrap();
        let theta = model.init_params(seed ^ case, -0.3);
        let n = 6;
        let pool = build_pool(&model, n, seed ^ (case + 10)).unwrap();
        let target = TargetDensity::toy(ToyKind::Star);
        let problem = make_compositional(model.clone(), pool, target).unwrap();
        let k2 = 16;

        let batch_at = |th: &[f64]| {
            // identical draws for every probe: the stream is re-keyed
            let mut rng = stream(seed, 1_000 + case, StreamId::GradDraws);
            oracle_g(&problem, th, k2, Cols::All, &mut rng).unwrap()
        };

        let batch = batch_at(&theta);
        let log_y = batch.log_mean().to_vec();
        let counts: Vec<(usize, usize)> = (0..n).map(|c| (c, 1)).collect();
        let k = log_scale_combine(&batch.log_mean_entries(), &log_y, &counts, n).unwrap();
        let coeffs: Vec<(usize, f64)> = k.entries.iter().map(|&(c, lk)| (c, lk.exp())).collect();
        let analytic = batch.contract_log_mean(&coeffs).unwrap();

        let fd = central_finite_diff(
            &mut |th: &[f64]| plug_in_loss(batch_at(th).log_mean()),
            &theta,
            FD_STEP,
        );
        worst = worst.max(max_rel_err(&analytic, &fd));
        cases += 1;
    }
    GradcheckEntry {
        name: "solver-end-to-end".into(),
        cases,
        max_rel_err: worst,
    }
}

/// A model with no trainable parameters produces an empty entry.
fn degenerate_entry() -> GradcheckEntry {
    GradcheckEntry {
        name: "degenerate-empty".into(),
        cases: 0,
        max_rel_err: 0.0,
    }
}

pub fn run_gradcheck(seed: u64) -> Result<GradcheckReport, HarnessError> {
    let entries = vec![
        sweep_mlp(seed),
        sweep_gaussians(seed),
        sweep_targets(seed),
        sweep_log_ratio(seed),
        sweep_end_to_end(seed),
        degenerate_entry(),
    ];
    let max_rel_err = entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    let total_cases = entries.iter().map(|e| e.cases).sum();
    Ok(GradcheckReport {
        entries,
        max_rel_err,
        total_cases,
    })
}
