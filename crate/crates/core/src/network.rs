//! The DGM ResNET / highway architecture with Xavier initialization and a
//! byte-exact checkpoint format.
//!
//! The recurrence
//!   S¹ = σ(W¹x + b¹)
//!   Zˡ = σ(U^z x + W^z Sˡ + b^z),   Gˡ, Rˡ analogous
//!   Hˡ = σ(U^h x + W^h (Sˡ⊙Rˡ) + b^h)
//!   Sˡ⁺¹ = (1−Gˡ)⊙Hˡ + Zˡ⊙Sˡ
//!   f = W S^{L+1} + b
//! is written once over [`JetOps`] and instantiated for the autodiff tape
//! (training) and for plain f64 jets (evaluation, penalty bookkeeping).

use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{DerivOrder, Jet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }

    #[inline]
    fn phi(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }

    /// First derivative; ReLU uses 0 at the kink.
    #[inline]
    fn dphi(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let y = v.tanh();
                1.0 - y * y
            }
            Activation::Sigmoid => {
                let y = 1.0 / (1.0 + (-v).exp());
                y * (1.0 - y)
            }
        }
    }

    #[inline]
    fn ddphi(self, v: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => {
                let y = v.tanh();
                -2.0 * y * (1.0 - y * y)
            }
            Activation::Sigmoid => {
                let y = 1.0 / (1.0 + (-v).exp());
                y * (1.0 - y) * (1.0 - 2.0 * y)
            }
        }
    }

    pub fn second_derivative_vanishes(self) -> bool {
        matches!(self, Activation::Relu)
    }
}

/// Architecture hyperparameters. Width is uniform across blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub d_in: usize,
    pub d_out: usize,
    /// Number of highway blocks L (L = 0 degenerates to a one-hidden-layer
    /// perceptron).
    pub blocks: usize,
    pub width: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(d_in: usize, blocks: usize, width: usize, activation: Activation) -> Result<Self> {
        if d_in == 0 || width == 0 {
            return Err(Error::Config("widths must be positive".into()));
        }
        Ok(Architecture {
            d_in,
            d_out: 1,
            blocks,
            width,
            activation,
        })
    }

    /// M·d_in + M + L·4·(M·d_in + M² + M) + d_out·M + d_out
    pub fn param_count(&self) -> usize {
        let (d, m, l) = (self.d_in, self.width, self.blocks);
        m * d + m + l * 4 * (m * d + m * m + m) + self.d_out * m + self.d_out
    }
}

// Weight matrices in flat-θ order, with Xavier fan shapes.
fn for_each_matrix(arch: &Architecture, mut f: impl FnMut(usize, usize, usize, bool)) {
    let (d, m, l) = (arch.d_in, arch.width, arch.blocks);
    let mut off = 0;
    let emit = |off: &mut usize, rows: usize, cols: usize, bias: bool, f: &mut dyn FnMut(usize, usize, usize, bool)| {
        f(*off, rows, cols, bias);
        *off += rows * cols;
    };
    emit(&mut off, m, d, false, &mut f); // W¹
    emit(&mut off, m, 1, true, &mut f); // b¹
    for _ in 0..l {
        for _ in 0..4 {
            emit(&mut off, m, d, false, &mut f); // U^·
            emit(&mut off, m, m, false, &mut f); // W^·
            emit(&mut off, m, 1, true, &mut f); // b^·
        }
    }
    emit(&mut off, arch.d_out, m, false, &mut f); // W
    emit(&mut off, arch.d_out, 1, true, &mut f); // b
    debug_assert_eq!(off, arch.param_count());
}

/// Scalar/jet algebra the forward recurrence is generic over.
trait JetOps {
    type S: Copy;
    type J: Clone;
    fn param(&mut self, idx: usize) -> Self::S;
    fn input(&mut self, x: &[f64], i: usize) -> Self::J;
    fn add(&mut self, a: &Self::J, b: &Self::J) -> Self::J;
    fn scale(&mut self, s: Self::S, j: &Self::J) -> Self::J;
    fn shift(&mut self, s: Self::S, j: &Self::J) -> Self::J;
    fn mul(&mut self, a: &Self::J, b: &Self::J) -> Self::J;
    fn one_minus(&mut self, j: &Self::J) -> Self::J;
    fn act(&mut self, a: Activation, j: &Self::J) -> Self::J;
}

struct TapeOps<'a> {
    tape: &'a mut Tape,
    order: DerivOrder,
}

impl JetOps for TapeOps<'_> {
    type S = Var;
    type J = Jet;

    fn param(&mut self, idx: usize) -> Var {
        self.tape.param(idx)
    }

    fn input(&mut self, x: &[f64], i: usize) -> Jet {
        Jet::input(self.tape, x, i, self.order)
    }

    fn add(&mut self, a: &Jet, b: &Jet) -> Jet {
        Jet::add(self.tape, a, b)
    }

    fn scale(&mut self, s: Var, j: &Jet) -> Jet {
        Jet::scale(self.tape, s, j)
    }

    fn shift(&mut self, s: Var, j: &Jet) -> Jet {
        Jet::shift(self.tape, s, j)
    }

    fn mul(&mut self, a: &Jet, b: &Jet) -> Jet {
        Jet::mul(self.tape, a, b)
    }

    fn one_minus(&mut self, j: &Jet) -> Jet {
        Jet::one_minus(self.tape, j)
    }

    fn act(&mut self, a: Activation, j: &Jet) -> Jet {
        let t = &mut *self.tape;
        let y = match a {
            Activation::Relu => t.relu(j.val),
            Activation::Tanh => t.tanh(j.val),
            Activation::Sigmoid => t.sigmoid(j.val),
        };
        if j.d1.is_empty() {
            return Jet {
                val: y,
                d1: Vec::new(),
                d2: None,
            };
        }
        let dphi = match a {
            Activation::Relu => t.step(j.val),
            Activation::Tanh => {
                let y2 = t.sqr(y);
                let n = t.neg(y2);
                t.add_const(n, 1.0)
            }
            Activation::Sigmoid => {
                let n = t.neg(y);
                let om = t.add_const(n, 1.0);
                t.mul(y, om)
            }
        };
        let d1: Vec<Var> = j.d1.iter().map(|&vi| t.mul(dphi, vi)).collect();
        let d2 = j.d2.as_ref().map(|jd2| {
            let ddphi = match a {
                Activation::Relu => t.constant(0.0),
                Activation::Tanh => {
                    let m = t.mul(y, dphi);
                    t.mul_const(m, -2.0)
                }
                Activation::Sigmoid => {
                    let m2y = t.mul_const(y, -2.0);
                    let om2y = t.add_const(m2y, 1.0);
                    t.mul(dphi, om2y)
                }
            };
            jd2.iter()
                .zip(&j.d1)
                .map(|(&vii, &vi)| {
                    let vi2 = t.sqr(vi);
                    let t1 = t.mul(ddphi, vi2);
                    let t2 = t.mul(dphi, vii);
                    t.add(t1, t2)
                })
                .collect()
        });
        Jet { val: y, d1, d2 }
    }
}

/// Plain-f64 jet: value, first derivatives, diagonal second derivatives.
#[derive(Clone)]
pub struct F64Jet {
    pub val: f64,
    pub d1: Vec<f64>,
    pub d2: Option<Vec<f64>>,
}

struct F64Ops<'a> {
    theta: &'a [f64],
    order: DerivOrder,
}

impl JetOps for F64Ops<'_> {
    type S = f64;
    type J = F64Jet;

    fn param(&mut self, idx: usize) -> f64 {
        self.theta[idx]
    }

    fn input(&mut self, x: &[f64], i: usize) -> F64Jet {
        let d1 = if self.order.tracks_gradient() {
            (0..x.len())
                .map(|j| if i == j { 1.0 } else { 0.0 })
                .collect()
        } else {
            Vec::new()
        };
        let d2 = self.order.tracks_laplacian().then(|| vec![0.0; x.len()]);
        F64Jet { val: x[i], d1, d2 }
    }

    fn add(&mut self, a: &F64Jet, b: &F64Jet) -> F64Jet {
        F64Jet {
            val: a.val + b.val,
            d1: a.d1.iter().zip(&b.d1).map(|(x, y)| x + y).collect(),
            d2: a.d2.as_ref().map(|ad| {
                ad.iter()
                    .zip(b.d2.as_ref().unwrap())
                    .map(|(x, y)| x + y)
                    .collect()
            }),
        }
    }

    fn scale(&mut self, s: f64, j: &F64Jet) -> F64Jet {
        F64Jet {
            val: s * j.val,
            d1: j.d1.iter().map(|x| s * x).collect(),
            d2: j.d2.as_ref().map(|jd| jd.iter().map(|x| s * x).collect()),
        }
    }

    fn shift(&mut self, s: f64, j: &F64Jet) -> F64Jet {
        F64Jet {
            val: j.val + s,
            d1: j.d1.clone(),
            d2: j.d2.clone(),
        }
    }

    fn mul(&mut self, a: &F64Jet, b: &F64Jet) -> F64Jet {
        F64Jet {
            val: a.val * b.val,
            d1: a
                .d1
                .iter()
                .zip(&b.d1)
                .map(|(ai, bi)| ai * b.val + a.val * bi)
                .collect(),
            d2: a.d2.as_ref().map(|ad| {
                ad.iter()
                    .zip(b.d2.as_ref().unwrap())
                    .zip(a.d1.iter().zip(&b.d1))
                    .map(|((aii, bii), (ai, bi))| aii * b.val + 2.0 * ai * bi + a.val * bii)
                    .collect()
            }),
        }
    }

    fn one_minus(&mut self, j: &F64Jet) -> F64Jet {
        F64Jet {
            val: 1.0 - j.val,
            d1: j.d1.iter().map(|x| -x).collect(),
            d2: j.d2.as_ref().map(|jd| jd.iter().map(|x| -x).collect()),
        }
    }

    fn act(&mut self, a: Activation, j: &F64Jet) -> F64Jet {
        let y = a.phi(j.val);
        if j.d1.is_empty() {
            return F64Jet {
                val: y,
                d1: Vec::new(),
                d2: None,
            };
        }
        let dp = a.dphi(j.val);
        let d1: Vec<f64> = j.d1.iter().map(|vi| dp * vi).collect();
        let d2 = j.d2.as_ref().map(|jd2| {
            let ddp = a.ddphi(j.val);
            jd2.iter()
                .zip(&j.d1)
                .map(|(vii, vi)| ddp * (vi * vi) + dp * vii)
                .collect()
        });
        F64Jet { val: y, d1, d2 }
    }
}

fn affine<O: JetOps>(
    ops: &mut O,
    cursor: &mut usize,
    rows: usize,
    cols: usize,
    input: &[O::J],
) -> Vec<O::J> {
    let base = *cursor;
    let out = (0..rows)
        .map(|i| {
            let w0 = ops.param(base + i * cols);
            let mut acc = ops.scale(w0, &input[0]);
            for j in 1..cols {
                let w = ops.param(base + i * cols + j);
                let t = ops.scale(w, &input[j]);
                acc = ops.add(&acc, &t);
            }
            acc
        })
        .collect();
    *cursor += rows * cols;
    out
}

fn bias_act<O: JetOps>(ops: &mut O, cursor: &mut usize, act: Activation, v: &mut [O::J]) {
    let base = *cursor;
    for (i, j) in v.iter_mut().enumerate() {
        let b = ops.param(base + i);
        let shifted = ops.shift(b, j);
        *j = ops.act(act, &shifted);
    }
    *cursor += v.len();
}

// σ(U x + W s + b), consuming U, W, b from the cursor.
fn gate<O: JetOps>(
    ops: &mut O,
    cursor: &mut usize,
    arch: &Architecture,
    xs: &[O::J],
    s: &[O::J],
) -> Vec<O::J> {
    let m = arch.width;
    let ux = affine(ops, cursor, m, arch.d_in, xs);
    let ws = affine(ops, cursor, m, m, s);
    let mut v: Vec<O::J> = ux.iter().zip(&ws).map(|(a, b)| ops.add(a, b)).collect();
    bias_act(ops, cursor, arch.activation, &mut v);
    v
}

fn eval_net<O: JetOps>(arch: &Architecture, ops: &mut O, x: &[f64]) -> O::J {
    let m = arch.width;
    let xs: Vec<O::J> = (0..arch.d_in).map(|i| ops.input(x, i)).collect();
    let mut cursor = 0usize;

    let mut s = affine(ops, &mut cursor, m, arch.d_in, &xs);
    bias_act(ops, &mut cursor, arch.activation, &mut s);

    for _ in 0..arch.blocks {
        let z = gate(ops, &mut cursor, arch, &xs, &s);
        let g = gate(ops, &mut cursor, arch, &xs, &s);
        let r = gate(ops, &mut cursor, arch, &xs, &s);
        let sr: Vec<O::J> = s.iter().zip(&r).map(|(a, b)| ops.mul(a, b)).collect();
        let h = gate(ops, &mut cursor, arch, &xs, &sr);
        s = z
            .iter()
            .zip(&g)
            .zip(h.iter().zip(&s))
            .map(|((zi, gi), (hi, si))| {
                let omg = ops.one_minus(gi);
                let a = ops.mul(&omg, hi);
                let b = ops.mul(zi, si);
                ops.add(&a, &b)
            })
            .collect();
    }

    let out = affine(ops, &mut cursor, arch.d_out, m, &s);
    let b = ops.param(cursor);
    cursor += arch.d_out;
    debug_assert_eq!(cursor, arch.param_count());
    ops.shift(b, &out[0])
}

/// A network: architecture plus the flat parameter vector θ.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    theta: Vec<f64>,
}

static RELU_LAPLACIAN_WARNED: AtomicBool = AtomicBool::new(false);

impl Network {
    pub fn zeros(arch: Architecture) -> Network {
        let n = arch.param_count();
        Network {
            arch,
            theta: vec![0.0; n],
        }
    }

    /// Xavier-uniform weights (±√(6/(fan_in+fan_out))), zero biases.
    /// Deterministic under `seed`.
    pub fn init_xavier(arch: Architecture, seed: u64) -> Network {
        let mut net = Network::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for_each_matrix(&arch, |off, rows, cols, is_bias| {
            if is_bias {
                return;
            }
            // rows = fan_out, cols = fan_in in this layout
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for k in 0..rows * cols {
                net.theta[off + k] = dist.sample(&mut rng);
            }
        });
        net
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.d_in
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.arch.d_in);
        let mut ops = F64Ops {
            theta: &self.theta,
            order: DerivOrder::Value,
        };
        eval_net(&self.arch, &mut ops, x).val
    }

    /// Value and spatial gradient without touching a tape.
    pub fn forward_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        debug_assert_eq!(x.len(), self.arch.d_in);
        let mut ops = F64Ops {
            theta: &self.theta,
            order: DerivOrder::Gradient,
        };
        let j = eval_net(&self.arch, &mut ops, x);
        (j.val, j.d1)
    }

    /// Full f64 jet (used by tests and diagnostics).
    pub fn forward_jet(&self, x: &[f64], order: DerivOrder) -> F64Jet {
        let mut ops = F64Ops {
            theta: &self.theta,
            order,
        };
        eval_net(&self.arch, &mut ops, x)
    }

    /// Records the forward pass on `tape` (whose parameter leaves must be
    /// this network's θ) and returns w(x), ∇w(x) and, at order 2, the
    /// diagonal second derivatives, all as tape nodes.
    pub fn record_forward(&self, tape: &mut Tape, x: &[f64], order: DerivOrder) -> Result<Jet> {
        if x.len() != self.arch.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.arch.d_in,
                got: x.len(),
            });
        }
        if tape.param_count() != self.theta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.theta.len(),
                got: tape.param_count(),
            });
        }
        if order.tracks_laplacian()
            && self.arch.activation.second_derivative_vanishes()
            && !RELU_LAPLACIAN_WARNED.swap(true, Ordering::Relaxed)
        {
            log::warn!(
                "second derivatives requested with ReLU activation: the Laplacian of a ReLU network is zero almost everywhere"
            );
        }
        let mut ops = TapeOps { tape, order };
        Ok(eval_net(&self.arch, &mut ops, x))
    }

    pub fn checkpoint_save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let header = format!(
            "gradflow checkpoint v1\nd_in {}\nd_out {}\nblocks {}\nwidth {}\nactivation {}\nparams {}\nbyteorder little\n---\n",
            self.arch.d_in,
            self.arch.d_out,
            self.arch.blocks,
            self.arch.width,
            self.arch.activation.name(),
            self.theta.len()
        );
        f.write_all(header.as_bytes())?;
        let mut buf = Vec::with_capacity(self.theta.len() * 8);
        for &v in &self.theta {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Network> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let sep = b"---\n";
        let split = bytes
            .windows(sep.len())
            .position(|w| w == sep)
            .ok_or_else(|| Error::Checkpoint("missing header terminator `---`".into()))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let payload = &bytes[split + sep.len()..];

        let mut lines = header.lines();
        let magic = lines.next().unwrap_or("");
        if magic != "gradflow checkpoint v1" {
            return Err(Error::Checkpoint(format!(
                "unsupported format/version: `{magic}`"
            )));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("missing field `{name}`")))?;
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| Error::Checkpoint(format!("malformed line `{line}`")))?;
            if k != name {
                return Err(Error::Checkpoint(format!(
                    "expected field `{name}`, found `{k}`"
                )));
            }
            Ok(v.to_string())
        };
        let parse_usize = |s: String, name: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Checkpoint(format!("field `{name}` is not an integer")))
        };
        let d_in = parse_usize(field("d_in")?, "d_in")?;
        let d_out = parse_usize(field("d_out")?, "d_out")?;
        let blocks = parse_usize(field("blocks")?, "blocks")?;
        let width = parse_usize(field("width")?, "width")?;
        let activation = Activation::parse(&field("activation")?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let params = parse_usize(field("params")?, "params")?;
        let byteorder = field("byteorder")?;
        if byteorder != "little" {
            return Err(Error::Checkpoint(format!(
                "unsupported byte order `{byteorder}`"
            )));
        }

        let mut arch = Architecture::new(d_in, blocks, width, activation)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        arch.d_out = d_out;
        if arch.param_count() != params {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: header says {params}, architecture implies {}",
                arch.param_count()
            )));
        }
        if payload.len() != params * 8 {
            return Err(Error::Checkpoint(format!(
                "truncated or oversized payload: expected {} bytes, found {}",
                params * 8,
                payload.len()
            )));
        }
        let theta = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Network { arch, theta })
    }
}
