//! Reverse-mode differentiation on a flat tape.
//!
//! The tape records vector-valued primitive operations (add, mul, exp, log,
//! relu/tanh, affine mat-vec, reductions, Gaussian log-density kernels) into
//! an arena of values. Evaluation is eager: a node's output is computed when
//! it is recorded. `backward` replays the record once in reverse and
//! accumulates adjoints into a gradient over the parameter block.
//!
//! Tapes are rebuilt per evaluation and confined to a single thread; many
//! tapes may run in parallel.

use crate::error::{Error, Result};

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

#[derive(Debug, Clone)]
enum Op {
    /// View of `params[src..src+len]`; adjoints accumulate into the gradient.
    Param {
        src: u32,
    },
    /// Literal values, no backward.
    Const,
    /// Copy of `x[at..at+len]`.
    Slice {
        x: Var,
        at: u32,
    },
    /// Concatenation of inputs.
    Stack {
        xs: Box<[Var]>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale {
        x: Var,
        c: f64,
    },
    Shift(Var),
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    Relu(Var),
    /// Numerically stable log(1 + e^x).
    Softplus(Var),
    Dot(Var, Var),
    Sum(Var),
    /// Max-shifted log Σ exp over one vector.
    LogSumExp(Var),
    /// Σ wᵢ·xᵢ over scalar inputs with constant weights.
    WeightedSum {
        xs: Box<[Var]>,
        ws: Box<[f64]>,
    },
    /// y = W·x (+ b). `w` is row-major `rows × cols`.
    Affine {
        w: Var,
        b: Option<Var>,
        x: Var,
        rows: u32,
        cols: u32,
    },
    /// log N(x; mean, diag(e^{2·log_std})).
    GaussLogPdfDiag {
        x: Var,
        mean: Var,
        log_std: Var,
    },
    /// log N(x; mean, LLᵀ) with L packed lower-triangular, log-diagonal storage.
    GaussLogPdfChol {
        x: Var,
        mean: Var,
        factor: Var,
    },
    /// y = L·x with L packed lower-triangular, log-diagonal storage.
    TriMatVecLogDiag {
        factor: Var,
        x: Var,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    ofs: u32,
    len: u32,
}

pub struct Tape {
    params: Vec<f64>,
    vals: Vec<f64>,
    nodes: Vec<Node>,
    // scratch reused across backward calls
    adj: Vec<f64>,
    buf: Vec<f64>,
}

const LN_2PI: f64 = 1.8378770664093453;

/// Solve L·w = r for packed lower-triangular L with log-diagonal storage.
/// Packed layout: row-major, row i holds [L_i0 .. L_i,i-1, log L_ii].
fn tri_forward_solve(packed: &[f64], r: &[f64], w: &mut [f64]) {
    let d = r.len();
    for i in 0..d {
        let row = i * (i + 1) / 2;
        let mut acc = r[i];
        for j in 0..i {
            acc -= packed[row + j] * w[j];
        }
        w[i] = acc * (-packed[row + i]).exp();
    }
}

/// Solve Lᵀ·u = w for the same packed layout.
fn tri_backward_solve(packed: &[f64], w: &[f64], u: &mut [f64]) {
    let d = w.len();
    for i in (0..d).rev() {
        let mut acc = w[i];
        for k in (i + 1)..d {
            acc -= packed[k * (k + 1) / 2 + i] * u[k];
        }
        u[i] = acc * (-packed[i * (i + 1) / 2 + i]).exp();
    }
}

impl Tape {
    pub fn new(params: &[f64]) -> Self {
        Tape {
            params: params.to_vec(),
            vals: Vec::with_capacity(1024),
            nodes: Vec::with_capacity(256),
            adj: Vec::new(),
            buf: Vec::new(),
        }
    }

    /// Drop all recorded nodes, keeping allocations, and rebind parameters.
    pub fn reset(&mut self, params: &[f64]) {
        self.params.clear();
        self.params.extend_from_slice(params);
        self.vals.clear();
        self.nodes.clear();
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn val(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.0 as usize];
        &self.vals[n.ofs as usize..(n.ofs + n.len) as usize]
    }

    pub fn scalar_val(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0 as usize].len, 1);
        self.vals[self.nodes[v.0 as usize].ofs as usize]
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0 as usize].len as usize
    }

    fn push(&mut self, op: Op, len: usize) -> Var {
        let ofs = self.vals.len() as u32;
        self.vals.resize(self.vals.len() + len, 0.0);
        self.nodes.push(Node {
            op,
            ofs,
            len: len as u32,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    fn out_mut(&mut self, v: Var) -> &mut [f64] {
        let n = &self.nodes[v.0 as usize];
        let (o, l) = (n.ofs as usize, n.len as usize);
        &mut self.vals[o..o + l]
    }

    pub fn param(&mut self, src: usize, len: usize) -> Var {
        assert!(src + len <= self.params.len(), "param slice out of range");
        let v = self.push(Op::Param { src: src as u32 }, len);
        let n = &self.nodes[v.0 as usize];
        let ofs = n.ofs as usize;
        for i in 0..len {
            self.vals[ofs + i] = self.params[src + i];
        }
        v
    }

    pub fn constv(&mut self, data: &[f64]) -> Var {
        let v = self.push(Op::Const, data.len());
        self.out_mut(v).copy_from_slice(data);
        v
    }

    pub fn scalar(&mut self, c: f64) -> Var {
        self.constv(&[c])
    }

    pub fn slice(&mut self, x: Var, at: usize, len: usize) -> Var {
        assert!(at + len <= self.len_of(x));
        let v = self.push(Op::Slice { x, at: at as u32 }, len);
        let ofs = self.nodes[v.0 as usize].ofs as usize;
        let xn = &self.nodes[x.0 as usize];
        let (xo, _) = (xn.ofs as usize, xn.len as usize);
        for i in 0..len {
            self.vals[ofs + i] = self.vals[xo + at + i];
        }
        v
    }

    pub fn stack(&mut self, xs: &[Var]) -> Var {
        let total: usize = xs.iter().map(|&v| self.len_of(v)).sum();
        let v = self.push(
            Op::Stack {
                xs: xs.to_vec().into_boxed_slice(),
            },
            total,
        );
        let mut ofs = self.nodes[v.0 as usize].ofs as usize;
        for &x in xs {
            let xn = &self.nodes[x.0 as usize];
            let (xo, xl) = (xn.ofs as usize, xn.len as usize);
            for i in 0..xl {
                self.vals[ofs + i] = self.vals[xo + i];
            }
            ofs += xl;
        }
        v
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let la = self.len_of(a);
        assert_eq!(la, self.len_of(b), "elementwise op length mismatch");
        let v = self.push(op, la);
        let (ao, bo, vo) = (
            self.nodes[a.0 as usize].ofs as usize,
            self.nodes[b.0 as usize].ofs as usize,
            self.nodes[v.0 as usize].ofs as usize,
        );
        for i in 0..la {
            self.vals[vo + i] = f(self.vals[ao + i], self.vals[bo + i]);
        }
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let l = self.len_of(x);
        let v = self.push(op, l);
        let (xo, vo) = (
            self.nodes[x.0 as usize].ofs as usize,
            self.nodes[v.0 as usize].ofs as usize,
        );
        for i in 0..l {
            self.vals[vo + i] = f(self.vals[xo + i]);
        }
        v
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale { x, c }, |v| c * v)
    }

    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Shift(x), |v| v + c)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), f64::ln)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), |v| {
            v.max(0.0) + (-v.abs()).exp().ln_1p()
        })
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let la = self.len_of(a);
        assert_eq!(la, self.len_of(b));
        let v = self.push(Op::Dot(a, b), 1);
        let (ao, bo) = (
            self.nodes[a.0 as usize].ofs as usize,
            self.nodes[b.0 as usize].ofs as usize,
        );
        let mut s = 0.0;
        for i in 0..la {
            s += self.vals[ao + i] * self.vals[bo + i];
        }
        let vo = self.nodes[v.0 as usize].ofs as usize;
        self.vals[vo] = s;
        v
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let l = self.len_of(x);
        let v = self.push(Op::Sum(x), 1);
        let xo = self.nodes[x.0 as usize].ofs as usize;
        let s: f64 = self.vals[xo..xo + l].iter().sum();
        let vo = self.nodes[v.0 as usize].ofs as usize;
        self.vals[vo] = s;
        v
    }

    pub fn logsumexp(&mut self, x: Var) -> Var {
        let l = self.len_of(x);
        assert!(l > 0);
        let v = self.push(Op::LogSumExp(x), 1);
        let xo = self.nodes[x.0 as usize].ofs as usize;
        let m = self.vals[xo..xo + l]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let out = if m.is_finite() {
            let s: f64 = self.vals[xo..xo + l].iter().map(|&a| (a - m).exp()).sum();
            m + s.ln()
        } else {
            m
        };
        let vo = self.nodes[v.0 as usize].ofs as usize;
        self.vals[vo] = out;
        v
    }

    pub fn weighted_sum(&mut self, xs: &[Var], ws: &[f64]) -> Var {
        assert_eq!(xs.len(), ws.len());
        let mut s = 0.0;
        for (&x, &w) in xs.iter().zip(ws) {
            debug_assert_eq!(self.len_of(x), 1);
            s += w * self.scalar_val(x);
        }
        let v = self.push(
            Op::WeightedSum {
                xs: xs.to_vec().into_boxed_slice(),
                ws: ws.to_vec().into_boxed_slice(),
            },
            1,
        );
        let vo = self.nodes[v.0 as usize].ofs as usize;
        self.vals[vo] = s;
        v
    }

    /// y = W·x + b. `w` holds `rows*cols` values row-major.
    pub fn affine(&mut self, w: Var, b: Option<Var>, x: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.len_of(w), rows * cols, "affine weight size");
        assert_eq!(self.len_of(x), cols, "affine input size");
        if let Some(b) = b {
            assert_eq!(self.len_of(b), rows, "affine bias size");
        }
        let v = self.push(
            Op::Affine {
                w,
                b,
                x,
                rows: rows as u32,
                cols: cols as u32,
            },
            rows,
        );
        let wo = self.nodes[w.0 as usize].ofs as usize;
        let xo = self.nodes[x.0 as usize].ofs as usize;
        let vo = self.nodes[v.0 as usize].ofs as usize;
        for r in 0..rows {
            let mut acc = 0.0;
            let row = wo + r * cols;
            for c in 0..cols {
                acc += self.vals[row + c] * self.vals[xo + c];
            }
            self.vals[vo + r] = acc;
        }
        if let Some(b) = b {
            let bo = self.nodes[b.0 as usize].ofs as usize;
            for r in 0..rows {
                self.vals[vo + r] += self.vals[bo + r];
            }
        }
        v
    }

    pub fn gauss_logpdf_diag(&mut self, x: Var, mean: Var, log_std: Var) -> Var {
        let d = self.len_of(x);
        assert_eq!(d, self.len_of(mean));
        assert_eq!(d, self.len_of(log_std));
        let v = self.push(Op::GaussLogPdfDiag { x, mean, log_std }, 1);
        let xo = self.nodes[x.0 as usize].ofs as usize;
        let mo = self.nodes[mean.0 as usize].ofs as usize;
        let so = self.nodes[log_std.0 as usize].ofs as usize;
        let mut out = -0.5 * d as f64 * LN_2PI;
        for i in 0..d {
            let ls = self.vals[so + i];
            let r = (self.vals[xo + i] - self.vals[mo + i]) * (-ls).exp();
            out -= ls + 0.5 * r * r;
        }
        let vo = self.nodes[v.0 as usize].ofs as usize;
        self.vals[vo] = out;
        v
    }

    pub fn gauss_logpdf_chol(&mut self, x: Var, mean: Var, factor: Var) -> Var {
        let d = self.len_of(x);
        assert_eq!(d, self.len_of(mean));
        assert_eq!(d * (d + 1) / 2, self.len_of(factor), "packed factor size");
        let v = self.push(Op::GaussLogPdfChol { x, mean, factor }, 1);
        let xo = self.nodes[x.0 as usize].ofs as usize;
        let mo = self.nodes[mean.0 as usize].ofs as usize;
        let fo = self.nodes[factor.0 as usize].ofs as usize;
        let packed = self.vals[fo..fo + d * (d + 1) / 2].to_vec();
        let r: Vec<f64> = (0..d)
            .map(|i| self.vals[xo + i] - self.vals[mo + i])
            .collect();
        let mut w = vec![0.0; d];
        tri_forward_solve(&packed, &r, &mut w);
        let mut out = -0.5 * d as f64 * LN_2PI;
        for i in 0..d {
            out -= packed[i * (i + 1) / 2 + i];
            out -= 0.5 * w[i] * w[i];
        }
        let vo = self.nodes[v.0 as usize].ofs as usize;
        self.vals[vo] = out;
        v
    }

    pub fn tri_matvec(&mut self, factor: Var, x: Var) -> Var {
        let d = self.len_of(x);
        assert_eq!(d * (d + 1) / 2, self.len_of(factor), "packed factor size");
        let v = self.push(Op::TriMatVecLogDiag { factor, x }, d);
        let fo = self.nodes[factor.0 as usize].ofs as usize;
        let xo = self.nodes[x.0 as usize].ofs as usize;
        let vo = self.nodes[v.0 as usize].ofs as usize;
        for i in 0..d {
            let row = fo + i * (i + 1) / 2;
            let mut acc = self.vals[row + i].exp() * self.vals[xo + i];
            for j in 0..i {
                acc += self.vals[row + j] * self.vals[xo + j];
            }
            self.vals[vo + i] = acc;
        }
        v
    }

    /// Gradient of the recorded scalar `out` with respect to the parameter
    /// block, seeding the output adjoint with 1.
    pub fn backward(&mut self, out: Var) -> Result<Vec<f64>> {
        if self.nodes.is_empty() {
            return Err(Error::Tape("backward before any forward recording".into()));
        }
        if self.len_of(out) != 1 {
            return Err(Error::Tape(format!(
                "backward seed must be scalar, got length {}",
                self.len_of(out)
            )));
        }
        let mut grad = vec![0.0; self.params.len()];
        self.adj.clear();
        self.adj.resize(self.vals.len(), 0.0);
        self.adj[self.nodes[out.0 as usize].ofs as usize] = 1.0;

        for idx in (0..=out.0 as usize).rev() {
            let node = self.nodes[idx].clone();
            let (o, l) = (node.ofs as usize, node.len as usize);
            // output adjoint, copied out so input adjoints can be written freely
            self.buf.clear();
            self.buf.extend_from_slice(&self.adj[o..o + l]);
            if self.buf.iter().all(|&a| a == 0.0) {
                continue;
            }
            match node.op {
                Op::Param { src } => {
                    let s = src as usize;
                    for i in 0..l {
                        grad[s + i] += self.buf[i];
                    }
                }
                Op::Const => {}
                Op::Slice { x, at } => {
                    let xo = self.nodes[x.0 as usize].ofs as usize + at as usize;
                    for i in 0..l {
                        self.adj[xo + i] += self.buf[i];
                    }
                }
                Op::Stack { ref xs } => {
                    let mut pos = 0usize;
                    for &x in xs.iter() {
                        let xn = &self.nodes[x.0 as usize];
                        let (xo, xl) = (xn.ofs as usize, xn.len as usize);
                        for i in 0..xl {
                            self.adj[xo + i] += self.buf[pos + i];
                        }
                        pos += xl;
                    }
                }
                Op::Add(a, b) => {
                    let ao = self.nodes[a.0 as usize].ofs as usize;
                    let bo = self.nodes[b.0 as usize].ofs as usize;
                    for i in 0..l {
                        self.adj[ao + i] += self.buf[i];
                        self.adj[bo + i] += self.buf[i];
                    }
                }
                Op::Sub(a, b) => {
                    let ao = self.nodes[a.0 as usize].ofs as usize;
                    let bo = self.nodes[b.0 as usize].ofs as usize;
                    for i in 0..l {
                        self.adj[ao + i] += self.buf[i];
                        self.adj[bo + i] -= self.buf[i];
                    }
                }
                Op::Mul(a, b) => {
                    let ao = self.nodes[a.0 as usize].ofs as usize;
                    let bo = self.nodes[b.0 as usize].ofs as usize;
                    for i in 0..l {
                        self.adj[ao + i] += self.vals[bo + i] * self.buf[i];
                        self.adj[bo + i] += self.vals[ao + i] * self.buf[i];
                    }
                }
                Op::Scale { x, c } => {
                    let xo = self.nodes[x.0 as usize].ofs as usize;
                    for i in 0..l {
                        self.adj[xo + i] += c * self.buf[i];
                    }
                }
                Op::Shift(x) => {
                    let xo = self.nodes[x.0 as usize].ofs as usize;
                    for i in 0..l {
                        self.adj[xo + i] += self.buf[i];
                    }
                }
                Op::Exp(x) => {
                    let xo = self.nodes[x.0 as usize].ofs as usize;
                    for i in 0..l {
                        self.adj[xo + i] += self.vals[o + i] * self.buf[i];
                    }
                }
                Op::Ln(x) => {
                    let xo = self.nodes[x.0 as usize].ofs as usize;
                    for i in 0..l {
                        self.adj[xo + i] += self.buf[i] / self.vals[xo + i];
                    }
                }
                Op::Tanh(x) => {
                    let xo = self.nodes[x.0 as usize].ofs as usize;
                    for i in 0..l {
                        let y = self.vals[o + i];
                        self.adj[xo + i] += (1.0 - y * y) * self.buf[i];
                    }
                }
                Op::Relu(x) => {
                    let xo = self.nodes[x.0 as usize].ofs as usize;
                    for i in 0..l {
                        if self.vals[xo + i] > 0.0 {
                            self.adj[xo + i] += self.buf[i];
                        }
                    }
                }
                Op::Softplus(x) => {
                    let xo = self.nodes[x.0 as usize].ofs as usize;
                    for i in 0..l {
                        let v = self.vals[xo + i];
                        let sig = if v >= 0.0 {
                            1.0 / (1.0 + (-v).exp())
                        } else {
                            let e = v.exp();
                            e / (1.0 + e)
                        };
                        self.adj[xo + i] += sig * self.buf[i];
                    }
                }
                Op::Dot(a, b) => {
                    let s = self.buf[0];
                    let an = &self.nodes[a.0 as usize];
                    let (ao, al) = (an.ofs as usize, an.len as usize);
                    let bo = self.nodes[b.0 as usize].ofs as usize;
                    for i in 0..al {
                        self.adj[ao + i] += s * self.vals[bo + i];
                        self.adj[bo + i] += s * self.vals[ao + i];
                    }
                }
                Op::Sum(x) => {
                    let s = self.buf[0];
                    let xn = &self.nodes[x.0 as usize];
                    let (xo, xl) = (xn.ofs as usize, xn.len as usize);
                    for i in 0..xl {
                        self.adj[xo + i] += s;
                    }
                }
                Op::LogSumExp(x) => {
                    let s = self.buf[0];
                    let out_v = self.vals[o];
                    let xn = &self.nodes[x.0 as usize];
                    let (xo, xl) = (xn.ofs as usize, xn.len as usize);
                    for i in 0..xl {
                        self.adj[xo + i] += s * (self.vals[xo + i] - out_v).exp();
                    }
                }
                Op::WeightedSum { ref xs, ref ws } => {
                    let s = self.buf[0];
                    for (&x, &w) in xs.iter().zip(ws.iter()) {
                        let xo = self.nodes[x.0 as usize].ofs as usize;
                        self.adj[xo] += s * w;
                    }
                }
                Op::Affine {
                    w,
                    b,
                    x,
                    rows,
                    cols,
                } => {
                    let (rows, cols) = (rows as usize, cols as usize);
                    let wo = self.nodes[w.0 as usize].ofs as usize;
                    let xo = self.nodes[x.0 as usize].ofs as usize;
                    for r in 0..rows {
                        let u = self.buf[r];
                        if u == 0.0 {
                            continue;
                        }
                        let row = wo + r * cols;
                        for c in 0..cols {
                            self.adj[row + c] += u * self.vals[xo + c];
                            self.adj[xo + c] += u * self.vals[row + c];
                        }
                    }
                    if let Some(b) = b {
                        let bo = self.nodes[b.0 as usize].ofs as usize;
                        for r in 0..rows {
                            self.adj[bo + r] += self.buf[r];
                        }
                    }
                }
                Op::GaussLogPdfDiag { x, mean, log_std } => {
                    let s = self.buf[0];
                    let d = self.len_of(x);
                    let xo = self.nodes[x.0 as usize].ofs as usize;
                    let mo = self.nodes[mean.0 as usize].ofs as usize;
                    let so = self.nodes[log_std.0 as usize].ofs as usize;
                    for i in 0..d {
                        let inv = (-self.vals[so + i]).exp();
                        let r = (self.vals[xo + i] - self.vals[mo + i]) * inv;
                        self.adj[xo + i] += s * (-r * inv);
                        self.adj[mo + i] += s * (r * inv);
                        self.adj[so + i] += s * (r * r - 1.0);
                    }
                }
                #[allow(clippy::needless_range_loop)]
                Op::GaussLogPdfChol { x, mean, factor } => {
                    let s = self.buf[0];
                    let d = self.len_of(x);
                    let xo = self.nodes[x.0 as usize].ofs as usize;
                    let mo = self.nodes[mean.0 as usize].ofs as usize;
                    let fo = self.nodes[factor.0 as usize].ofs as usize;
                    let packed = self.vals[fo..fo + d * (d + 1) / 2].to_vec();
                    let r: Vec<f64> = (0..d)
                        .map(|i| self.vals[xo + i] - self.vals[mo + i])
                        .collect();
                    let mut w_ = vec![0.0; d];
                    tri_forward_solve(&packed, &r, &mut w_);
                    let mut u = vec![0.0; d];
                    tri_backward_solve(&packed, &w_, &mut u);
                    for i in 0..d {
                        self.adj[xo + i] += s * (-u[i]);
                        self.adj[mo + i] += s * u[i];
                        let row = fo + i * (i + 1) / 2;
                        for j in 0..i {
                            self.adj[row + j] += s * (u[i] * w_[j]);
                        }
                        // diagonal stored as log L_ii
                        let lii = packed[i * (i + 1) / 2 + i].exp();
                        self.adj[row + i] += s * (u[i] * w_[i] * lii - 1.0);
                    }
                }
                Op::TriMatVecLogDiag { factor, x } => {
                    let d = l;
                    let fo = self.nodes[factor.0 as usize].ofs as usize;
                    let xo = self.nodes[x.0 as usize].ofs as usize;
                    for i in 0..d {
                        let a = self.buf[i];
                        if a == 0.0 {
                            continue;
                        }
                        let row = fo + i * (i + 1) / 2;
                        for j in 0..i {
                            self.adj[row + j] += a * self.vals[xo + j];
                            self.adj[xo + j] += a * self.vals[row + j];
                        }
                        let lii = self.vals[row + i].exp();
                        self.adj[row + i] += a * self.vals[xo + i] * lii;
                        self.adj[xo + i] += a * lii;
                    }
                }
            }
        }
        Ok(grad)
    }
}
