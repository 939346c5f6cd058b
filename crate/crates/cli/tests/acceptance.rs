//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them all). The criteria
//! include wall-clock budgets, so the tests serialize on a global lock.

use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use astro_float::{BigFloat, Consts, RoundingMode};
use rand::Rng;

use civi_cli::config::{default_bias_config, default_toy_config, Experiment, RecurrenceSection};
use civi_cli::{run_bias_rate, run_blr, run_gradcheck, run_recurrence, run_toy};
use civi_core::baselines::{
    nmc_loss_grad, step_adam, BaselineOpt, BaselineState, LrSchedule, NmcConfig,
};
use civi_core::composition::{oracle_f, oracle_g, plug_in_loss, Cols};
use civi_core::diffcore::gaussian::{logpdf_diag, LN_2PI};
use civi_core::diffcore::mlp::{Activation, MlpSpec};
use civi_core::diffcore::tape::{Tape, Var};
use civi_core::fixtures::Lognormal;
use civi_core::rng::{stream, StreamId};
use civi_core::sivi::{
    build_pool, make_compositional, synthetic_dataset, CovShape, CustomTarget, SemiImplicitModel,
    TargetDensity,
};
use civi_core::sketch::sketch_gradient_with_subset;
use civi_core::solver::{
    log_add_exp, run as solver_run, smooth_update_log, OutputMode, ScheduleConfig, SketchModeCfg,
    StepInfo,
};

fn gate() -> std::sync::MutexGuard<'static, ()> {
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(|| Mutex::new(()))
        .lock()
        .unwrap_or_else(|p| p.into_inner())
}

fn verdict(name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {name}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {name} failed: {detail}");
}

fn tmp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("civi_acceptance_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

// ---------------------------------------------------------------- 1

fn subsets(n: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, d: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, d, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, d, &mut Vec::new(), &mut out);
    out
}

#[test]
fn criterion_1_sketch_unbiasedness_exhaustive() {
    let _g = gate();
    let start = Instant::now();

    let mut srng = stream(201, 0, StreamId::Scratch);
    let ln = Lognormal::random(5, 3, 0.3, &mut srng);
    let ln_copy = ln.clone();
    let problem = ln.into_problem();
    let theta = vec![0.25, -0.4, 0.6];
    let mut grng = stream(201, 1, StreamId::GradDraws);
    let gb = oracle_g(&problem, &theta, 4, Cols::All, &mut grng).unwrap();
    let log_y: Vec<f64> = gb.log_mean().iter().map(|&l| l + 0.07).collect();
    let mut frng = stream(201, 1, StreamId::OuterIndices);
    let fb = oracle_f(&log_y, 0, 9, &mut frng).unwrap();

    // independent full product from the fixture's closed-form Jacobian rows
    let fbar = fb.mean_grad_entries();
    let mut full = vec![0.0; 3];
    for &(k, f) in &fbar {
        let lin: f64 = ln_copy
            .row(k)
            .iter()
            .zip(&theta)
            .map(|(&a, &t)| a * t)
            .sum();
        let gbar: f64 = gb
            .draws()
            .iter()
            .map(|d| (lin + ln_copy.b[k] + d[k]).exp())
            .sum::<f64>()
            / gb.k2() as f64;
        for (o, &a) in full.iter_mut().zip(ln_copy.row(k)) {
            *o += f * gbar * a;
        }
    }

    let mut worst: f64 = 0.0;
    for d in 1..=5usize {
        let subs = subsets(5, d);
        let mut mean = [0.0; 3];
        for s in &subs {
            let est = sketch_gradient_with_subset(&fb, &gb, s).unwrap();
            for (m, e) in mean.iter_mut().zip(&est) {
                *m += e / subs.len() as f64;
            }
        }
        for (m, f) in mean.iter().zip(&full) {
            worst = worst.max((m - f).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "1 (sketch unbiasedness)",
        worst < 1e-12 && elapsed < 1.0,
        &format!("max |subset-mean − full product| = {worst:.3e}, {elapsed:.3}s"),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_bias_decay_rate() {
    let _g = gate();
    let start = Instant::now();
    let mut cfg = default_bias_config();
    cfg.seed = 7;
    let out = run_bias_rate(&cfg, &tmp_dir("bias")).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let ok = out.slope >= -1.1 && out.slope <= -0.5 && elapsed < 600.0;
    verdict(
        "2 (bias decay rate)",
        ok,
        &format!(
            "log-log slope {:.3} over checkpoints {:?}, {elapsed:.0}s",
            out.slope,
            out.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>()
        ),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_gradient_correctness() {
    let _g = gate();
    let start = Instant::now();
    let report = run_gradcheck(11).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let ok = report.pass() && report.total_cases >= 100 && elapsed < 120.0;
    verdict(
        "3 (gradient correctness)",
        ok,
        &format!(
            "{} fixtures, max rel err {:.3e}, {elapsed:.1}s",
            report.total_cases, report.max_rel_err
        ),
    );
}

// ---------------------------------------------------------------- 4

fn bigfloat_log_add_exp(a: f64, b: f64) -> f64 {
    let p = 850usize; // ~256 decimal digits
    let rm = RoundingMode::ToEven;
    let mut cc = Consts::new().unwrap();
    let ea = BigFloat::from_f64(a, p).exp(p, rm, &mut cc);
    let eb = BigFloat::from_f64(b, p).exp(p, rm, &mut cc);
    let ln = ea.add(&eb, p, rm).ln(p, rm, &mut cc);
    format!("{ln}").parse::<f64>().unwrap()
}

#[test]
fn criterion_4_log_domain_fidelity() {
    let _g = gate();
    let start = Instant::now();

    // in-range agreement with linear-domain smoothing
    let mut rng = stream(204, 0, StreamId::Scratch);
    let mut worst_in_range: f64 = 0.0;
    for _ in 0..500 {
        let ly: f64 = rng.gen_range(-180.0..180.0);
        let lg: f64 = rng.gen_range(-180.0..180.0);
        let beta: f64 = rng.gen_range(0.01..0.999);
        let mut v = vec![ly];
        smooth_update_log(&mut v, &[lg], beta).unwrap();
        let linear = ((1.0 - beta) * ly.exp() + beta * lg.exp()).ln();
        worst_in_range = worst_in_range.max((v[0] - linear).abs());
    }

    // Taylor overflow branch against the 250-digit oracle, gaps to 700 nats
    let mut worst_taylor: f64 = 0.0;
    for &hi in &[-250.0f64, 0.0, 350.0] {
        let mut gap = 40.0f64;
        while gap <= 700.0 {
            let (a, b) = (hi, hi - gap);
            let got = log_add_exp(a, b);
            let oracle = bigfloat_log_add_exp(a, b);
            worst_taylor = worst_taylor.max((got - oracle).abs());
            gap += 33.0;
        }
    }
    // the full smoothing op routed through the same branch
    let mut v = vec![500.0];
    smooth_update_log(&mut v, &[-150.0], 0.5).unwrap();
    let oracle = bigfloat_log_add_exp(0.5f64.ln() + 500.0, 0.5f64.ln() - 150.0);
    worst_taylor = worst_taylor.max((v[0] - oracle).abs());

    let elapsed = start.elapsed().as_secs_f64();
    let ok = worst_in_range < 1e-10 && worst_taylor < 1e-12 && elapsed < 30.0;
    verdict(
        "4 (log-domain fidelity)",
        ok,
        &format!(
            "in-range dev {worst_in_range:.3e}, Taylor-vs-oracle dev {worst_taylor:.3e}, {elapsed:.1}s"
        ),
    );
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_toy_two_modal() {
    let _g = gate();
    let mut cfg = default_toy_config();
    cfg.seed = 1;
    // the two-modal reference settings are the defaults: K1=100,
    // K2=1000, C_alpha=3e-4, C_beta=0.99, C_gamma=0.9, mu=0.999,
    // 200 iterations.
    assert_eq!(cfg.schedule.c1, 100.0);
    assert_eq!(cfg.schedule.c2, 1000.0);
    assert_eq!(cfg.schedule.c_alpha, 3e-4);
    assert_eq!(cfg.schedule.c_beta, 0.99);
    assert_eq!(cfg.schedule.c_gamma, 0.9);
    assert_eq!(cfg.schedule.mu, 0.999);
    assert_eq!(cfg.schedule.iters, 200);

    let out = run_toy(&cfg, &tmp_dir("toy")).unwrap();

    let halved = out.final_kl <= 0.5 * out.init_kl;
    let mut centers = out.centers.clone();
    centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let near = (centers[0][0] + 2.0).abs() < 0.5
        && centers[0][1].abs() < 0.5
        && (centers[1][0] - 2.0).abs() < 0.5
        && centers[1][1].abs() < 0.5;
    let within_budget = out.wall_s < 74.32; // 10x the reference 7.432 s
    verdict(
        "5 (toy two-modal)",
        halved && near && within_budget,
        &format!(
            "KL {:.4} -> {:.4}, centers ({:.2},{:.2})/({:.2},{:.2}), wall {:.1}s",
            out.init_kl,
            out.final_kl,
            centers[0][0],
            centers[0][1],
            centers[1][0],
            centers[1][1],
            out.wall_s
        ),
    );
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_blr_oracle_agreement() {
    let _g = gate();
    let start = Instant::now();
    let dir = tmp_dir("blr");

    // synthetic D=2, N=200 dataset
    let mut drng = stream(77, 0, StreamId::Scratch);
    let ds = synthetic_dataset(&[1.5, -1.0], 200, &mut drng);
    let csv = dir.join("synthetic.csv");
    ds.write_csv(&csv).unwrap();

    let mut cfg = default_toy_config();
    cfg.experiment = Experiment::Blr;
    cfg.target = None;
    cfg.dataset = Some(csv);
    cfg.seed = 2;
    cfg.n = 256;
    cfg.mcmc_steps = 1_000_000;
    cfg.schedule.c_alpha = 4e-4;
    cfg.schedule.c_beta = 0.99;
    cfg.schedule.c1 = 50.0;
    cfg.schedule.c2 = 200.0;
    cfg.schedule.c3 = 50.0;
    cfg.schedule.c_gamma = 0.7;
    cfg.schedule.d_t = 50;
    cfg.schedule.iters = 900;
    cfg.schedule.theta2_c_alpha = Some(0.01);
    cfg.schedule.theta2_c_gamma = Some(0.6);
    cfg.model.hidden = vec![200, 200];
    cfg.model.cov = CovShape::Cholesky;
    cfg.model.mixing_variance = 1.0;

    let out = run_blr(&cfg, &dir).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let mut mean_ok = true;
    let mut std_ok = true;
    for c in 0..2 {
        if (out.vi_mean[c] - out.mcmc_mean[c]).abs() > 0.15 {
            mean_ok = false;
        }
        if (out.vi_std[c] - out.mcmc_std[c]).abs() / out.mcmc_std[c] > 0.30 {
            std_ok = false;
        }
    }
    verdict(
        "6 (BLR oracle agreement)",
        mean_ok && std_ok && elapsed < 300.0,
        &format!(
            "mean ({:.3},{:.3}) vs chain ({:.3},{:.3}); std ({:.3},{:.3}) vs ({:.3},{:.3}); {elapsed:.0}s",
            out.vi_mean[0],
            out.vi_mean[1],
            out.mcmc_mean[0],
            out.mcmc_mean[1],
            out.vi_std[0],
            out.vi_std[1],
            out.mcmc_std[0],
            out.mcmc_std[1]
        ),
    );
}

// ---------------------------------------------------------------- 7

struct Conjugate1d {
    x_obs: f64,
    lik_var: f64,
    prior_var: f64,
}

impl CustomTarget for Conjugate1d {
    fn dim(&self) -> usize {
        1
    }
    fn log_density(&self, z: &[f64]) -> f64 {
        logpdf_diag(&[self.x_obs], &[z[0]], &[0.5 * self.lik_var.ln()])
            + logpdf_diag(z, &[0.0], &[0.5 * self.prior_var.ln()])
    }
    fn emit(&self, tape: &mut Tape, z: Var) -> Var {
        let x = tape.constv(&[self.x_obs]);
        let ls_lik = tape.constv(&[0.5 * self.lik_var.ln()]);
        let lik = tape.gauss_logpdf_diag(x, z, ls_lik);
        let zero = tape.constv(&[0.0]);
        let ls_pr = tape.constv(&[0.5 * self.prior_var.ln()]);
        let prior = tape.gauss_logpdf_diag(z, zero, ls_pr);
        tape.add(lik, prior)
    }
}

#[test]
fn criterion_7_conjugate_evidence() {
    let _g = gate();
    let start = Instant::now();
    let make_target = || Conjugate1d {
        x_obs: 1.0,
        lik_var: 1.0,
        prior_var: 1.0,
    };
    // closed-form evidence: p(x) = N(x; 0, lik_var + prior_var)
    let neg_log_evidence = 0.5 * LN_2PI + 0.5 * 2f64.ln() + 0.25;

    let net = MlpSpec::new(vec![2, 16, 16, 1], Activation::Relu).unwrap();
    let model = SemiImplicitModel::new(2, 1, 1.0, net, CovShape::Diag).unwrap();
    let theta0 = model.init_params(3, 0.0);
    let pool = build_pool(&model, 256, 10).unwrap();
    let problem = make_compositional(
        model.clone(),
        pool,
        TargetDensity::Custom(Arc::new(make_target())),
    )
    .unwrap();

    let cfg = ScheduleConfig {
        c_alpha: 2e-3,
        c_beta: 0.99,
        c1: 32.0,
        c2: 64.0,
        c3: 32.0,
        c_gamma: 0.9,
        mu: 0.999,
        xi: 1e-8,
        d_t: 32,
        chunks: 1,
        iters: 1500,
        constant_batches: true,
        sketch: SketchModeCfg::SparseNonzero,
        output: OutputMode::FinalIterate,
        groups: vec![],
    };
    let out = solver_run(&problem, &theta0, &cfg, 5, false, None).unwrap();

    // fresh-pool estimate of the minimized objective
    let eval_pool = build_pool(&model, 2048, 999).unwrap();
    let eval_problem = make_compositional(
        model,
        eval_pool,
        TargetDensity::Custom(Arc::new(make_target())),
    )
    .unwrap();
    let mut rng = stream(5, 777, StreamId::GradDraws);
    let batch = oracle_g(&eval_problem, &out.theta_final, 512, Cols::All, &mut rng).unwrap();
    let loss = plug_in_loss(batch.log_mean());
    let gap = (loss - neg_log_evidence).abs();
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "7 (conjugate evidence)",
        gap < 0.05 && elapsed < 60.0,
        &format!(
            "minimized objective {loss:.4} vs −log p(x) {neg_log_evidence:.4} (gap {gap:.4}), {elapsed:.1}s"
        ),
    );
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_recurrence_bound() {
    let _g = gate();
    let start = Instant::now();
    let case = RecurrenceSection {
        c_eta: 2.0,
        c_zeta: 1.0,
        a: 0.2,
        b: 1.0,
        c1: 1.0,
        c2: 1.0,
        a1: 1.0,
        horizon: 1_000_000,
    };
    let v = run_recurrence(&case).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "8 (recurrence bound)",
        v.holds && elapsed < 10.0,
        &format!(
            "C_A {:.4}, worst A_t·t^(b−a)/C_A = {:.6} at t = {}, {elapsed:.2}s",
            v.c_a, v.worst_ratio, v.worst_t
        ),
    );
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_nmc_oracle_efficiency() {
    let _g = gate();
    let mut civi_counts = Vec::new();
    let mut nmc_counts = Vec::new();
    for seed in 0..10u64 {
        let mut frng = stream(seed, 0, StreamId::Scratch);
        let fixture = Lognormal::random(16, 8, 0.5, &mut frng);
        let theta0 = vec![0.0; 8];
        let threshold = fixture.exact_loss(&theta0) - 0.5;

        // solver draws, counted by the problem's instrumented counter
        let problem = fixture.clone().into_problem();
        let cfg = ScheduleConfig {
            c_alpha: 3e-4,
            c_beta: 0.9,
            c1: 4.0,
            c2: 4.0,
            c3: 4.0,
            c_gamma: 0.9,
            mu: 0.999,
            xi: 1e-8,
            d_t: 16,
            chunks: 1,
            iters: 4000,
            constant_batches: false,
            sketch: SketchModeCfg::SparseNonzero,
            output: OutputMode::FinalIterate,
            groups: vec![],
        };
        let fixture_obs = fixture.clone();
        let mut civi_reach: Option<u64> = None;
        let problem_ref = &problem;
        let mut observer = |info: &StepInfo| -> Option<f64> {
            if civi_reach.is_none() && fixture_obs.exact_loss(info.theta) <= threshold {
                civi_reach = Some(problem_ref.g_eval_count());
            }
            None
        };
        solver_run(
            &problem,
            &theta0,
            &cfg,
            seed + 100,
            false,
            Some(&mut observer),
        )
        .unwrap();
        civi_counts.push(civi_reach.expect("solver reached the threshold"));

        // NMC-1: plug-in estimator with ADAM at the same C_alpha, M = 10
        let nmc_problem = fixture.clone().into_problem();
        let ncfg = NmcConfig {
            outer: 100,
            inner: 10,
            optimizer: BaselineOpt::Adam,
            lr: LrSchedule::Constant(cfg.c_alpha),
        };
        let mut st = BaselineState::new(8);
        let mut theta = theta0.clone();
        let mut reached = false;
        for t in 1..=200_000usize {
            let mut rng = stream(seed + 200, t as u64, StreamId::GradDraws);
            let (_, grad) = nmc_loss_grad(&nmc_problem, &theta, &ncfg, &mut rng).unwrap();
            step_adam(&mut st, &mut theta, &grad, ncfg.lr.at(t), 1e-8).unwrap();
            if fixture.exact_loss(&theta) <= threshold {
                reached = true;
                break;
            }
        }
        assert!(reached, "NMC-1 never reached the threshold");
        nmc_counts.push(nmc_problem.g_eval_count());
    }
    civi_counts.sort_unstable();
    nmc_counts.sort_unstable();
    let civi_med = civi_counts[5];
    let nmc_med = nmc_counts[5];
    verdict(
        "9 (fewer oracle calls than NMC-1)",
        civi_med < nmc_med,
        &format!("median g-draws to threshold: solver {civi_med} vs NMC-1 {nmc_med}"),
    );
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_manifest_rerun_determinism() {
    let _g = gate();

    // toy mini-run in deterministic mode
    let mut cfg = default_toy_config();
    cfg.seed = 9;
    cfg.n = 64;
    cfg.deterministic = true;
    cfg.eval_samples = 400;
    cfg.schedule.iters = 12;
    cfg.schedule.c1 = 16.0;
    cfg.schedule.c2 = 32.0;
    cfg.schedule.c3 = 16.0;
    cfg.schedule.d_t = 16;
    let d1 = tmp_dir("det_toy_a");
    run_toy(&cfg, &d1).unwrap();

    let manifest = civi_cli::output::Manifest::load(&d1.join("manifest.toml")).unwrap();
    let d2 = tmp_dir("det_toy_b");
    run_toy(&manifest.config, &d2).unwrap();
    let a = std::fs::read(d1.join("trajectory.csv")).unwrap();
    let b = std::fs::read(d2.join("trajectory.csv")).unwrap();
    let toy_ok = a == b;

    // blr mini-run
    let d3 = tmp_dir("det_blr_a");
    let mut drng = stream(12, 0, StreamId::Scratch);
    let ds = synthetic_dataset(&[1.0, -1.0], 40, &mut drng);
    let csv = d3.join("mini.csv");
    ds.write_csv(&csv).unwrap();
    let mut bcfg = default_toy_config();
    bcfg.experiment = Experiment::Blr;
    bcfg.target = None;
    bcfg.dataset = Some(csv);
    bcfg.seed = 4;
    bcfg.n = 32;
    bcfg.deterministic = true;
    bcfg.eval_samples = 200;
    bcfg.mcmc_steps = 20_000;
    bcfg.schedule.iters = 8;
    bcfg.schedule.c1 = 8.0;
    bcfg.schedule.c2 = 16.0;
    bcfg.schedule.c3 = 8.0;
    bcfg.schedule.d_t = 8;
    bcfg.model.hidden = vec![16, 16];
    bcfg.model.cov = CovShape::Cholesky;
    run_blr(&bcfg, &d3).unwrap();
    let manifest = civi_cli::output::Manifest::load(&d3.join("manifest.toml")).unwrap();
    let d4 = tmp_dir("det_blr_b");
    run_blr(&manifest.config, &d4).unwrap();
    let a = std::fs::read(d3.join("trajectory.csv")).unwrap();
    let b = std::fs::read(d4.join("trajectory.csv")).unwrap();
    let blr_ok = a == b;

    verdict(
        "10 (manifest re-run determinism)",
        toy_ok && blr_ok,
        &format!("toy bytes equal: {toy_ok}, blr bytes equal: {blr_ok}"),
    );
}
