//! Random-walk Metropolis reference sampler for posterior comparisons.

use civi_core::rng::{stream, StreamId};
use rand::Rng;
use rand_distr::StandardNormal;

pub struct McmcResult {
    /// Thinned post-burn-in samples.
    pub samples: Vec<Vec<f64>>,
    /// Acceptance rate after the adaptation window.
    pub acceptance: f64,
    /// Raised when the post-adaptation rate leaves [0.05, 0.7].
    pub acceptance_warning: bool,
}

/// Random-walk Metropolis on an arbitrary log-density. The step size adapts
/// toward a 0.234 acceptance rate during burn-in (first 20% of the chain)
/// and is frozen afterwards; the chain is thinned to at most `keep` samples.
pub fn metropolis(
    log_density: impl Fn(&[f64]) -> f64,
    init: &[f64],
    steps: usize,
    keep: usize,
    seed: u64,
) -> McmcResult {
    let d = init.len();
    let mut rng = stream(seed, 0, StreamId::Scratch);
    let mut z = init.to_vec();
    let mut lp = log_density(&z);
    let mut log_step: f64 = (2.38 / (d as f64).sqrt()).ln();

    let burn = steps / 5;
    let thin = ((steps - burn) / keep).max(1);
    let mut samples = Vec::with_capacity(keep);
    let mut window_accepts = 0usize;
    let mut window = 0usize;
    let mut post_accepts = 0usize;
    let mut post_total = 0usize;

    let mut proposal = vec![0.0; d];
    for t in 0..steps {
        let step = log_step.exp();
        for (p, &cur) in proposal.iter_mut().zip(&z) {
            *p = cur + step * rng.sample::<f64, _>(StandardNormal);
        }
        let lp_new = log_density(&proposal);
        let accept = lp_new - lp >= 0.0 || rng.gen::<f64>().ln() < lp_new - lp;
        if accept {
            z.copy_from_slice(&proposal);
            lp = lp_new;
        }

        if t < burn {
            window += 1;
            window_accepts += usize::from(accept);
            if window == 50 {
                let rate = window_accepts as f64 / 50.0;
                log_step += 0.3 * (rate - 0.234);
                window = 0;
                window_accepts = 0;
            }
        } else {
            post_total += 1;
            post_accepts += usize::from(accept);
            if (t - burn).is_multiple_of(thin) && samples.len() < keep {
                samples.push(z.clone());
            }
        }
    }

    let acceptance = post_accepts as f64 / post_total.max(1) as f64;
    McmcResult {
        samples,
        acceptance,
        acceptance_warning: !(0.05..=0.7).contains(&acceptance),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_std;
    use civi_core::diffcore::gaussian::logpdf_diag;

    #[test]
    fn conjugate_one_dim_gaussian_matches_closed_form() {
        // target N(1.5, 0.25): mean/var within 2%
        let log_p = |z: &[f64]| logpdf_diag(z, &[1.5], &[0.5f64.ln()]);
        let res = metropolis(log_p, &[0.0], 400_000, 10_000, 3);
        assert!(!res.acceptance_warning, "acceptance {}", res.acceptance);
        let (mean, std) = mean_std(&res.samples);
        assert!(
            (mean[0] - 1.5).abs() < 0.02 * 1.5 + 0.02,
            "mean {}",
            mean[0]
        );
        assert!((std[0] - 0.5).abs() / 0.5 < 0.02, "std {}", std[0]);
    }

    #[test]
    fn prior_only_blr_recovers_prior_scale() {
        // sample std ≈ 10 per coordinate within 10%
        let ds = civi_core::sivi::BlrDataset::new(vec![], vec![], 2).unwrap();
        let log_p = move |z: &[f64]| ds.log_joint(z);
        let res = metropolis(log_p, &[0.0, 0.0], 400_000, 10_000, 4);
        let (_, std) = mean_std(&res.samples);
        for s in std {
            assert!((s - 10.0).abs() / 10.0 < 0.1, "std {s}");
        }
    }

    #[test]
    fn chains_are_reproducible_under_fixed_seed() {
        let log_p = |z: &[f64]| logpdf_diag(z, &[0.0], &[0.0]);
        let a = metropolis(log_p, &[0.3], 20_000, 100, 11);
        let b = metropolis(log_p, &[0.3], 20_000, 100, 11);
        assert_eq!(a.samples, b.samples);
    }
}
