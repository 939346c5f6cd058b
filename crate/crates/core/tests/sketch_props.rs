//! Sketch estimator properties: exhaustive unbiasedness, column-touch
//! discipline, and sparse/dense agreement.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use civi_core::composition::{
    oracle_f, oracle_g, Cols, CompositionalProblem, Draw, FBatch, InnerG, WeightedTerm,
};
use civi_core::fixtures::Lognormal;
use civi_core::rng::{stream, StreamId};
use civi_core::sketch::{
    log_scale_combine, sample_subset, sketch_gradient, sketch_gradient_sparse,
    sketch_gradient_with_subset, SketchPlan,
};
use rand_chacha::ChaCha8Rng;

fn subsets(n: usize, d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..d).collect();
    loop {
        out.push(idx.clone());
        // next combination
        let mut i = d;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - d {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..d {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Independent full product: Σ_k f̄_k · ḡ_k · ∇log ḡ(:,k) computed from the
/// fixture's closed-form pieces, bypassing the sketch code path.
fn hand_full_product(
    ln: &Lognormal,
    theta: &[f64],
    draws: &[Draw],
    fbar: &[(usize, f64)],
) -> Vec<f64> {
    let k2 = draws.len() as f64;
    let mut out = vec![0.0; ln.p];
    for &(k, f) in fbar {
        // ḡ_k from the actual draws
        let lin: f64 = ln.row(k).iter().zip(theta).map(|(&a, &t)| a * t).sum();
        let gbar: f64 = draws
            .iter()
            .map(|d| (lin + ln.b[k] + d[k]).exp())
            .sum::<f64>()
            / k2;
        for (o, &a) in out.iter_mut().zip(ln.row(k)) {
            *o += f * gbar * a;
        }
    }
    out
}

#[test]
fn exhaustive_subset_mean_equals_full_product() {
    // n ≤ 6, p = 3: for every d, the mean of the sketch over all C(n,d)
    // subsets is the full product to 1e-12
    for n in [5usize, 6] {
        let mut srng = stream(20 + n as u64, 0, StreamId::Scratch);
        let ln = Lognormal::random(n, 3, 0.3, &mut srng);
        let ln_copy = ln.clone();
        let problem = ln.into_problem();
        let theta = vec![0.3, -0.2, 0.5];

        let mut grng = stream(20, 1, StreamId::GradDraws);
        let gb = oracle_g(&problem, &theta, 4, Cols::All, &mut grng).unwrap();
        let log_y: Vec<f64> = gb.log_mean().iter().map(|&l| l + 0.1).collect();
        let mut frng = stream(20, 1, StreamId::OuterIndices);
        let fb = oracle_f(&log_y, 0, 7, &mut frng).unwrap();

        let full = hand_full_product(&ln_copy, &theta, gb.draws(), &fb.mean_grad_entries());

        for d in 1..=n {
            let subs = subsets(n, d);
            let mut mean = [0.0; 3];
            for s in &subs {
                let est = sketch_gradient_with_subset(&fb, &gb, s).unwrap();
                for (m, e) in mean.iter_mut().zip(&est) {
                    *m += e / subs.len() as f64;
                }
            }
            for (m, f) in mean.iter().zip(&full) {
                assert!(
                    (m - f).abs() <= 1e-12 * f.abs().max(1.0),
                    "n={n} d={d}: {m} vs {f}"
                );
            }
        }
    }
}

#[test]
fn full_size_sketch_is_the_exact_product() {
    let mut srng = stream(21, 0, StreamId::Scratch);
    let ln = Lognormal::random(6, 2, 0.2, &mut srng);
    let ln_copy = ln.clone();
    let problem = ln.into_problem();
    let theta = vec![0.1, 0.4];
    let mut grng = stream(21, 1, StreamId::GradDraws);
    let gb = oracle_g(&problem, &theta, 3, Cols::All, &mut grng).unwrap();
    let log_y = gb.log_mean().to_vec();
    let mut frng = stream(21, 1, StreamId::OuterIndices);
    let fb = oracle_f(&log_y, 0, 9, &mut frng).unwrap();

    let all: Vec<usize> = (0..6).collect();
    let est = sketch_gradient_with_subset(&fb, &gb, &all).unwrap();
    let full = hand_full_product(&ln_copy, &theta, gb.draws(), &fb.mean_grad_entries());
    for (e, f) in est.iter().zip(&full) {
        assert!((e - f).abs() <= 1e-12 * f.abs().max(1.0));
    }
}

#[test]
fn zero_outer_gradient_gives_zero_output() {
    let mut srng = stream(22, 0, StreamId::Scratch);
    let ln = Lognormal::random(4, 2, 0.2, &mut srng);
    let problem = ln.into_problem();
    let theta = vec![0.0, 0.0];
    let mut grng = stream(22, 1, StreamId::GradDraws);
    let gb = oracle_g(&problem, &theta, 2, Cols::All, &mut grng).unwrap();
    let fb = FBatch::from_parts(vec![1, 3], vec![0.0, 0.0]);
    let est = sketch_gradient_with_subset(&fb, &gb, &[0, 1, 2, 3]).unwrap();
    assert_eq!(est, vec![0.0, 0.0]);
}

#[test]
fn empty_subset_is_an_error_and_empty_support_is_zero() {
    let mut srng = stream(23, 0, StreamId::Scratch);
    let ln = Lognormal::random(4, 2, 0.2, &mut srng);
    let problem = ln.into_problem();
    let theta = vec![0.0, 0.0];
    let mut grng = stream(23, 1, StreamId::GradDraws);
    let gb = oracle_g(&problem, &theta, 2, Cols::All, &mut grng).unwrap();
    let fb = FBatch::from_parts(vec![0], vec![1.0]);
    assert!(sketch_gradient_with_subset(&fb, &gb, &[]).is_err());

    let empty = civi_core::sketch::SparseOuterGrad {
        entries: vec![],
        k1: 4,
    };
    let mut rng = stream(23, 2, StreamId::SketchSubset);
    let est = sketch_gradient_sparse(&empty, &gb, &SketchPlan::sparse(2), &mut rng).unwrap();
    assert_eq!(est, vec![0.0, 0.0]);
}

#[test]
fn sparse_support_one_is_deterministic() {
    let mut srng = stream(24, 0, StreamId::Scratch);
    let ln = Lognormal::random(4, 3, 0.2, &mut srng);
    let problem = ln.into_problem();
    let theta = vec![0.2, -0.3, 0.1];
    let mut grng = stream(24, 1, StreamId::GradDraws);
    let gb = oracle_g(&problem, &theta, 3, Cols::All, &mut grng).unwrap();
    let log_y = gb.log_mean().to_vec();

    let k = log_scale_combine(&gb.log_mean_entries(), &log_y, &[(2, 3)], 3).unwrap();
    assert_eq!(k.support(), 1);
    let mut r1 = stream(24, 2, StreamId::SketchSubset);
    let mut r2 = stream(24, 99, StreamId::SketchSubset);
    let a = sketch_gradient_sparse(&k, &gb, &SketchPlan::sparse(1), &mut r1).unwrap();
    let b = sketch_gradient_sparse(&k, &gb, &SketchPlan::sparse(1), &mut r2).unwrap();
    assert_eq!(a, b, "single-support sketch must not depend on the stream");
}

#[test]
fn repeated_nu_multiplicity_matches_hand_expansion() {
    // K₁ samples all hitting index j: k_j = count·ḡ_j/(K₁·y_j) and the
    // output is the multiplicity-weighted column product
    let mut srng = stream(25, 0, StreamId::Scratch);
    let ln = Lognormal::random(3, 2, 0.2, &mut srng);
    let ln_copy = ln.clone();
    let problem = ln.into_problem();
    let theta = vec![0.4, 0.1];
    let mut grng = stream(25, 1, StreamId::GradDraws);
    let gb = oracle_g(&problem, &theta, 5, Cols::All, &mut grng).unwrap();
    let log_y = gb.log_mean().to_vec();

    let k1 = 4usize;
    let k = log_scale_combine(&gb.log_mean_entries(), &log_y, &[(1, k1)], k1).unwrap();
    // logs cancel: k_1 = count/K₁ = 1
    assert!((k.entries[0].1.exp() - 1.0).abs() < 1e-12);

    let mut rng = stream(25, 2, StreamId::SketchSubset);
    let est = sketch_gradient_sparse(&k, &gb, &SketchPlan::sparse(3), &mut rng).unwrap();
    // hand expansion: 1.0 · ∇log ḡ(:,1) = A row 1
    for (e, &a) in est.iter().zip(ln_copy.row(1)) {
        assert!((e - a).abs() < 1e-12);
    }
}

#[test]
fn sparse_and_dense_expectations_agree() {
    // n = 6: Monte-Carlo over subsets, 1e5 sketches, 1% agreement.
    // Same-sign loadings keep the product's expectation well away from
    // zero relative to the subset-sampling noise.
    let mut srng = stream(26, 0, StreamId::Scratch);
    use rand::Rng;
    let a: Vec<f64> = (0..12).map(|_| srng.gen_range(0.5..1.5)).collect();
    let ln = Lognormal::new(a, vec![0.0; 6], 6, 2, 0.3);
    let problem = ln.into_problem();
    let theta = vec![0.25, -0.15];
    let mut grng = stream(26, 1, StreamId::GradDraws);
    let gb = oracle_g(&problem, &theta, 4, Cols::All, &mut grng).unwrap();
    let log_y: Vec<f64> = gb.log_mean().iter().map(|&l| l - 0.05).collect();
    let mut frng = stream(26, 1, StreamId::OuterIndices);
    let fb = oracle_f(&log_y, 0, 12, &mut frng).unwrap();
    let k = log_scale_combine(&gb.log_mean_entries(), &log_y, &fb.counts(), fb.k1()).unwrap();

    let reps = 100_000usize;
    let d_t = 2;
    let mut dense_mean = vec![0.0; 2];
    let mut sparse_mean = vec![0.0; 2];
    let mut drng = stream(26, 2, StreamId::SketchSubset);
    let mut prng = stream(26, 3, StreamId::SketchSubset);
    for _ in 0..reps {
        let d = sketch_gradient(&fb, &gb, &SketchPlan::uniform(d_t), &mut drng).unwrap();
        let s = sketch_gradient_sparse(&k, &gb, &SketchPlan::sparse(d_t), &mut prng).unwrap();
        for i in 0..2 {
            dense_mean[i] += d[i] / reps as f64;
            sparse_mean[i] += s[i] / reps as f64;
        }
    }
    let diff: f64 = dense_mean
        .iter()
        .zip(&sparse_mean)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = dense_mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(
        diff / scale < 0.01,
        "dense {dense_mean:?} vs sparse {sparse_mean:?}"
    );
}

/// Wrapper that counts (column, draw) gradient touches.
struct CountingG {
    inner: Lognormal,
    touches: AtomicUsize,
}

impl InnerG for CountingG {
    fn pool_size(&self) -> usize {
        self.inner.pool_size()
    }
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn sample_draw(&self, rng: &mut ChaCha8Rng) -> Draw {
        self.inner.sample_draw(rng)
    }
    fn log_g(
        &self,
        theta: &[f64],
        draw: &Draw,
        cols: &[usize],
        out: &mut [f64],
    ) -> civi_core::Result<()> {
        self.inner.log_g(theta, draw, cols, out)
    }
    fn grad_log_g_col(
        &self,
        theta: &[f64],
        draw: &Draw,
        col: usize,
    ) -> civi_core::Result<Vec<f64>> {
        self.touches.fetch_add(1, Ordering::Relaxed);
        self.inner.grad_log_g_col(theta, draw, col)
    }
    fn grad_weighted(
        &self,
        theta: &[f64],
        draws: &[Draw],
        terms: &[WeightedTerm],
    ) -> civi_core::Result<Vec<f64>> {
        self.touches.fetch_add(terms.len(), Ordering::Relaxed);
        self.inner.grad_weighted(theta, draws, terms)
    }
}

#[test]
fn column_touch_discipline() {
    // at most d_t · K₂ Jacobian column touches per sketch call
    let mut srng = stream(27, 0, StreamId::Scratch);
    let ln = Lognormal::random(8, 2, 0.2, &mut srng);
    let counting = Arc::new(CountingG {
        inner: ln,
        touches: AtomicUsize::new(0),
    });
    let problem = CompositionalProblem::new(counting.clone());
    let theta = vec![0.3, 0.3];
    let k2 = 5usize;
    let mut grng = stream(27, 1, StreamId::GradDraws);
    let gb = oracle_g(&problem, &theta, k2, Cols::All, &mut grng).unwrap();
    let log_y = gb.log_mean().to_vec();
    let mut frng = stream(27, 1, StreamId::OuterIndices);
    let fb = oracle_f(&log_y, 0, 20, &mut frng).unwrap();
    let k = log_scale_combine(&gb.log_mean_entries(), &log_y, &fb.counts(), fb.k1()).unwrap();

    for d_t in [1usize, 2, 4] {
        counting.touches.store(0, Ordering::Relaxed);
        let mut rng = stream(27, 2 + d_t as u64, StreamId::SketchSubset);
        let _ = sketch_gradient_sparse(&k, &gb, &SketchPlan::sparse(d_t), &mut rng).unwrap();
        let touches = counting.touches.load(Ordering::Relaxed);
        assert!(
            touches <= d_t * k2,
            "d_t={d_t}: {touches} touches > {}",
            d_t * k2
        );
    }
}

#[test]
fn subset_helper_respects_size_and_membership() {
    let pool: Vec<usize> = vec![3, 5, 9, 11, 20];
    let mut rng = stream(28, 0, StreamId::SketchSubset);
    for d in 1..=5 {
        let s = sample_subset(&pool, d, &mut rng);
        assert_eq!(s.len(), d);
        let mut sorted = s.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), d);
        assert!(s.iter().all(|x| pool.contains(x)));
    }
}
