//! Bayesian logistic regression log-joints and dataset handling.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffcore::gaussian::LN_2PI;
use crate::diffcore::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Binary-labelled design matrix with an isotropic Gaussian prior on the
/// coefficients. Features are standardized at load time.
#[derive(Debug, Clone)]
pub struct BlrDataset {
    /// Row-major N×D.
    features: Vec<f64>,
    labels: Vec<u8>,
    dim: usize,
    pub prior_variance: f64,
}

/// Stable log σ(a) = −log(1 + e^{−a}) via the log1p(exp(−|a|)) branch.
pub fn log_sigmoid(a: f64) -> f64 {
    a.min(0.0) - (-a.abs()).exp().ln_1p()
}

impl BlrDataset {
    pub fn new(features: Vec<f64>, labels: Vec<u8>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("BLR dataset needs dim >= 1".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::dim(
                "BLR feature matrix",
                labels.len() * dim,
                features.len(),
            ));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Config("BLR labels must be 0/1".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("BLR features"));
        }
        Ok(BlrDataset {
            features,
            labels,
            dim,
            prior_variance: 100.0,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// Standardize every feature column to zero mean, unit variance.
    /// Constant columns are left centered only.
    pub fn standardize(&mut self) {
        let (n, d) = (self.n_rows(), self.dim);
        if n == 0 {
            return;
        }
        for c in 0..d {
            let mean: f64 = (0..n).map(|r| self.features[r * d + c]).sum::<f64>() / n as f64;
            let var: f64 = (0..n)
                .map(|r| {
                    let v = self.features[r * d + c] - mean;
                    v * v
                })
                .sum::<f64>()
                / n as f64;
            let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
            for r in 0..n {
                let v = &mut self.features[r * d + c];
                *v = (*v - mean) / scale;
            }
        }
    }

    /// log p(z) + Σᵢ [yᵢ log σ(xᵢᵀz) + (1−yᵢ) log(1−σ(xᵢᵀz))].
    pub fn log_joint(&self, z: &[f64]) -> f64 {
        let d = self.dim as f64;
        let ls = 0.5 * self.prior_variance.ln();
        let mut out = -0.5 * d * LN_2PI - d * ls;
        let inv_var = 1.0 / self.prior_variance;
        for &zi in z {
            out -= 0.5 * zi * zi * inv_var;
        }
        for i in 0..self.n_rows() {
            let a: f64 = self.row(i).iter().zip(z).map(|(&x, &w)| x * w).sum();
            let s = if self.labels[i] == 1 { a } else { -a };
            out += log_sigmoid(s);
        }
        out
    }

    /// Record the log-joint on a tape: Gaussian prior plus
    /// Σ log σ(sᵢ·xᵢᵀz) with sign vector s = 2y−1.
    pub fn emit_log_joint(&self, tape: &mut Tape, z: Var) -> Var {
        let d = self.dim;
        let zero = tape.constv(&vec![0.0; d]);
        let ls = tape.constv(&vec![0.5 * self.prior_variance.ln(); d]);
        let prior = tape.gauss_logpdf_diag(z, zero, ls);
        if self.n_rows() == 0 {
            return prior;
        }
        let x = tape.constv(&self.features);
        let acts = tape.affine(x, None, z, self.n_rows(), d);
        let signs: Vec<f64> = self
            .labels
            .iter()
            .map(|&y| if y == 1 { -1.0 } else { 1.0 })
            .collect();
        let sv = tape.constv(&signs);
        // log σ(s·a) = −softplus(−s·a); signs above already carry the minus
        let neg_sa = tape.mul(acts, sv);
        let sp = tape.softplus(neg_sa);
        let tot = tape.sum(sp);
        let loglik = tape.scale(tot, -1.0);
        tape.add(prior, loglik)
    }

    /// Headerless CSV, one row per observation, label in the last column.
    pub fn load_csv(path: &Path, standardize: bool) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut dim = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() < 2 {
                return Err(Error::Config(format!(
                    "CSV row {} needs at least one feature and a label",
                    lineno + 1
                )));
            }
            let d = fields.len() - 1;
            match dim {
                None => dim = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::dim(
                        format!("CSV row {} width", lineno + 1),
                        prev + 1,
                        d + 1,
                    ))
                }
                _ => {}
            }
            for f in &fields[..d] {
                let v: f64 = f.trim().parse().map_err(|_| {
                    Error::Config(format!("CSV row {}: bad float {f:?}", lineno + 1))
                })?;
                features.push(v);
            }
            let lab = fields[d].trim();
            let y: f64 = lab
                .parse()
                .map_err(|_| Error::Config(format!("CSV row {}: bad label {lab:?}", lineno + 1)))?;
            if y != 0.0 && y != 1.0 {
                return Err(Error::Config(format!(
                    "CSV row {}: label must be 0 or 1, got {y}",
                    lineno + 1
                )));
            }
            labels.push(y as u8);
        }
        let dim = dim.ok_or_else(|| Error::Config("empty dataset CSV".into()))?;
        let mut ds = BlrDataset::new(features, labels, dim)?;
        if standardize {
            ds.standardize();
        }
        Ok(ds)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        for i in 0..self.n_rows() {
            for v in self.row(i) {
                write!(w, "{},", v)?;
            }
            writeln!(w, "{}", self.labels[i])?;
        }
        Ok(())
    }
}

/// Seeded synthetic dataset: standard-normal features, labels drawn from a
/// logistic model with the given true coefficients.
pub fn synthetic_dataset<R: Rng>(z_true: &[f64], n_rows: usize, rng: &mut R) -> BlrDataset {
    let d = z_true.len();
    let mut features = Vec::with_capacity(n_rows * d);
    let mut labels = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let row: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let a: f64 = row.iter().zip(z_true).map(|(&x, &w)| x * w).sum();
        let p = 1.0 / (1.0 + (-a).exp());
        labels.push(if rng.gen::<f64>() < p { 1 } else { 0 });
        features.extend(row);
    }
    BlrDataset::new(features, labels, d).expect("synthetic dataset is well-formed")
}
