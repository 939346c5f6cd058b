//! Small statistics utilities: kernel density estimates, k-means, and
//! least-squares slope fitting.

use rayon::prelude::*;

/// Gaussian product-kernel density estimate with Scott's-rule bandwidths.
pub struct Kde {
    samples: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
    log_norm: f64,
}

impl Kde {
    pub fn fit(samples: &[Vec<f64>]) -> Kde {
        let n = samples.len();
        let d = samples[0].len();
        let nf = n as f64;
        let factor = nf.powf(-1.0 / (d as f64 + 4.0));
        let mut bandwidth = Vec::with_capacity(d);
        for c in 0..d {
            let mean: f64 = samples.iter().map(|s| s[c]).sum::<f64>() / nf;
            let var: f64 = samples
                .iter()
                .map(|s| (s[c] - mean) * (s[c] - mean))
                .sum::<f64>()
                / (nf - 1.0);
            bandwidth.push(var.sqrt().max(1e-12) * factor);
        }
        let log_norm: f64 = bandwidth
            .iter()
            .map(|h| h.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln())
            .sum();
        Kde {
            samples: samples.to_vec(),
            bandwidth,
            log_norm,
        }
    }

    fn log_kernel_sum(&self, z: &[f64], skip: Option<usize>) -> f64 {
        let mut m = f64::NEG_INFINITY;
        let mut terms = Vec::with_capacity(self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            if skip == Some(i) {
                continue;
            }
            let mut q = 0.0;
            for c in 0..z.len() {
                let r = (z[c] - s[c]) / self.bandwidth[c];
                q += r * r;
            }
            let t = -0.5 * q;
            m = m.max(t);
            terms.push(t);
        }
        let s: f64 = terms.iter().map(|&t| (t - m).exp()).sum();
        m + s.ln()
    }

    /// log density at `z`.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let n = self.samples.len() as f64;
        self.log_kernel_sum(z, None) - n.ln() - self.log_norm
    }

    /// Leave-one-out log density at the i-th fitted sample. Excluding the
    /// self-kernel removes most of the plug-in bias in entropy estimates.
    pub fn loo_log_density(&self, i: usize) -> f64 {
        let n = self.samples.len() as f64;
        self.log_kernel_sum(&self.samples[i].clone(), Some(i)) - (n - 1.0).ln() - self.log_norm
    }

    /// Monte-Carlo KL(q‖p) from the fitted samples: mean of
    /// log q̂(zᵢ) − log p(zᵢ) with the leave-one-out density. Terms are
    /// reduced in index order so the estimate is thread-count independent.
    pub fn kl_against(&self, log_p: impl Fn(&[f64]) -> f64 + Sync) -> f64 {
        let n = self.samples.len();
        let terms: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| self.loo_log_density(i) - log_p(&self.samples[i]))
            .collect();
        terms.iter().sum::<f64>() / n as f64
    }
}

/// Lloyd's algorithm with deterministic farthest-point init. Returns
/// `k` centers.
pub fn kmeans(samples: &[Vec<f64>], k: usize, iters: usize) -> Vec<Vec<f64>> {
    let d = samples[0].len();
    let dist2 = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
    };
    // farthest-point seeding from the sample mean
    let mean: Vec<f64> = (0..d)
        .map(|c| samples.iter().map(|s| s[c]).sum::<f64>() / samples.len() as f64)
        .collect();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = samples
        .iter()
        .max_by(|a, b| dist2(a, &mean).total_cmp(&dist2(b, &mean)))
        .unwrap()
        .clone();
    centers.push(first);
    while centers.len() < k {
        let next = samples
            .iter()
            .max_by(|a, b| {
                let da = centers.iter().map(|c| dist2(a, c)).fold(f64::MAX, f64::min);
                let db = centers.iter().map(|c| dist2(b, c)).fold(f64::MAX, f64::min);
                da.total_cmp(&db)
            })
            .unwrap()
            .clone();
        centers.push(next);
    }

    let mut assign = vec![0usize; samples.len()];
    #[allow(clippy::needless_range_loop)]
    for _ in 0..iters {
        let mut changed = false;
        for (i, s) in samples.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| dist2(s, &centers[a]).total_cmp(&dist2(s, &centers[b])))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        for c in 0..k {
            let members: Vec<&Vec<f64>> = samples
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(s, _)| s)
                .collect();
            if members.is_empty() {
                continue;
            }
            for j in 0..d {
                centers[c][j] = members.iter().map(|s| s[j]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    centers
}

/// Ordinary least squares y = a + b·x; returns (slope, intercept,
/// slope standard error).
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = (xs.len().max(3) - 2) as f64;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let e = y - intercept - slope * x;
            e * e
        })
        .sum();
    let se = (rss / dof / sxx).sqrt();
    (slope, intercept, se)
}

/// Per-coordinate mean and standard deviation of a sample matrix.
pub fn mean_std(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for s in samples {
        for c in 0..d {
            let r = s[c] - mean[c];
            std[c] += r * r;
        }
    }
    for v in &mut std {
        *v = (*v / (n - 1.0)).sqrt();
    }
    (mean, std)
}
