//! Artifact writers: trajectory CSV, density grids, sample dumps, and the
//! run manifest. Floats are written in shortest round-trip form so a
//! deterministic re-run reproduces files byte-for-byte.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use civi_core::solver::TrajectoryRecord;

use crate::config::RunConfig;
use crate::HarnessError;

pub fn write_trajectory(path: &Path, records: &[TrajectoryRecord]) -> Result<(), HarnessError> {
    let with_bias = records.iter().any(|r| r.bias.is_some());
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    if with_bias {
        writeln!(w, "t,loss,grad_norm,alpha,wall_ms,bias")?;
    } else {
        writeln!(w, "t,loss,grad_norm,alpha,wall_ms")?;
    }
    for r in records {
        write!(
            w,
            "{},{},{},{},{}",
            r.t, r.loss, r.grad_norm, r.alpha, r.wall_ms
        )?;
        if with_bias {
            match r.bias {
                Some(b) => writeln!(w, ",{b}")?,
                None => writeln!(w, ",")?,
            }
        } else {
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Row-major grid of log-densities with the fixed `x,y,logdensity` header.
pub fn write_grid(
    path: &Path,
    xs: (f64, f64),
    ys: (f64, f64),
    resolution: usize,
    mut log_density: impl FnMut(&[f64]) -> f64,
) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "x,y,logdensity")?;
    for i in 0..resolution {
        let x = xs.0 + (xs.1 - xs.0) * (i as f64 + 0.5) / resolution as f64;
        for j in 0..resolution {
            let y = ys.0 + (ys.1 - ys.0) * (j as f64 + 0.5) / resolution as f64;
            writeln!(w, "{x},{y},{}", log_density(&[x, y]))?;
        }
    }
    Ok(())
}

pub fn write_samples(path: &Path, samples: &[Vec<f64>]) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let row: Vec<String> = s.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Everything needed to reproduce a run: the resolved config, its hash,
/// and the software version.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub crate_version: String,
    pub experiment: String,
    pub seed: u64,
    pub deterministic: bool,
    pub config_hash: String,
    pub config: RunConfig,
}

impl Manifest {
    pub const VERSION: u32 = 1;

    pub fn new(config: &RunConfig) -> Manifest {
        let text = config.to_toml();
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let hash = hasher.finalize();
        Manifest {
            version: Self::VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: config.experiment.to_string(),
            seed: config.seed,
            deterministic: config.deterministic,
            config_hash: format!("sha256:{}", hex_of(&hash)),
            config: config.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let text =
            toml::to_string_pretty(self).map_err(|e| HarnessError::Config(format!("{e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Manifest, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| HarnessError::Config(format!("manifest parse: {e}")))
    }
}

fn hex_of(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn ensure_dir(path: &Path) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(path)?;
    Ok(path.to_path_buf())
}
