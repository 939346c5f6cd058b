//! Small dense networks over flat parameter slices.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    XavierNormal,
}

/// Layer widths include input and output, e.g. `[3, 50, 50, 2]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub init: InitScheme,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "mlp needs at least one layer, got widths {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Config(format!(
                "mlp widths must be positive: {widths:?}"
            )));
        }
        Ok(MlpSpec {
            widths,
            activation,
            init: InitScheme::XavierNormal,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Weights + biases, layer by layer, weights row-major.
    pub fn param_count(&self) -> usize {
        (0..self.n_layers())
            .map(|l| self.widths[l + 1] * (self.widths[l] + 1))
            .sum()
    }

    /// Xavier-normal weights (std = sqrt(2/(fan_in+fan_out))), zero biases.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let z: f64 = rng.sample(StandardNormal);
                out.push(std * z);
            }
            out.extend(std::iter::repeat_n(0.0, fan_out));
        }
        out
    }

    fn check(&self, params: &[f64], input: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim(
                "mlp parameter slice",
                self.param_count(),
                params.len(),
            ));
        }
        if input.len() != self.input_dim() {
            return Err(Error::dim(
                "mlp input (layer 0)",
                self.input_dim(),
                input.len(),
            ));
        }
        Ok(())
    }

    /// Plain forward evaluation, no recording. `out` gets the final layer.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check(params, input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let mut ofs = 0usize;
        for l in 0..self.n_layers() {
            let (ci, co) = (self.widths[l], self.widths[l + 1]);
            if cur.len() != ci {
                return Err(Error::dim(format!("mlp layer {l} input"), ci, cur.len()));
            }
            next.clear();
            next.resize(co, 0.0);
            let w = &params[ofs..ofs + co * ci];
            let b = &params[ofs + co * ci..ofs + co * (ci + 1)];
            for r in 0..co {
                let mut acc = b[r];
                let row = &w[r * ci..(r + 1) * ci];
                for c in 0..ci {
                    acc += row[c] * cur[c];
                }
                next[r] = acc;
            }
            ofs += co * (ci + 1);
            let last = l + 1 == self.n_layers();
            if !last {
                match self.activation {
                    Activation::Relu => next.iter_mut().for_each(|v| *v = v.max(0.0)),
                    Activation::Tanh => next.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Recorded forward pass; parameters read from the tape's parameter block
    /// starting at `param_ofs`.
    pub fn forward_on_tape(&self, tape: &mut Tape, param_ofs: usize, input: Var) -> Result<Var> {
        if tape.len_of(input) != self.input_dim() {
            return Err(Error::dim(
                "mlp input (layer 0)",
                self.input_dim(),
                tape.len_of(input),
            ));
        }
        let mut cur = input;
        let mut ofs = param_ofs;
        for l in 0..self.n_layers() {
            let (ci, co) = (self.widths[l], self.widths[l + 1]);
            let w = tape.param(ofs, co * ci);
            let b = tape.param(ofs + co * ci, co);
            cur = tape.affine(w, Some(b), cur, co, ci);
            ofs += co * (ci + 1);
            if l + 1 != self.n_layers() {
                cur = match self.activation {
                    Activation::Relu => tape.relu(cur),
                    Activation::Tanh => tape.tanh(cur),
                };
            }
        }
        Ok(cur)
    }
}
