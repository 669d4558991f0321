//! Tape-based reverse-mode differentiation with forward-mode spatial jets.
//!
//! Losses are assembled on a [`Tape`] whose first `n_params` nodes are the
//! trainable parameters. Spatial derivatives of a model (∇w, Δw) are carried
//! by [`Jet`]s whose components are themselves tape nodes, so a single
//! reverse sweep over the tape yields exact parameter gradients of any loss
//! built from values, gradients, or Laplacians (forward-over-reverse).

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// How much spatial-derivative information a forward recording tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivOrder {
    /// Value only.
    Value,
    /// Value and first derivatives ∂w/∂x_i.
    Gradient,
    /// Value, first derivatives, and the diagonal second derivatives
    /// (enough for the Laplacian trace).
    Laplacian,
}

impl DerivOrder {
    #[inline]
    pub fn tracks_gradient(self) -> bool {
        !matches!(self, DerivOrder::Value)
    }
    #[inline]
    pub fn tracks_laplacian(self) -> bool {
        matches!(self, DerivOrder::Laplacian)
    }
}

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// A single-writer record of primitive operations.
///
/// Replaying forward with identical inputs reproduces identical values
/// bit-for-bit: all operations are recorded and reduced in a fixed
/// left-to-right order and everything is f64.
pub struct Tape {
    values: Vec<f64>,
    nodes: Vec<Node>,
    n_params: usize,
}

impl Tape {
    /// Creates a tape whose first `theta.len()` nodes are parameter leaves
    /// (vars `0..theta.len()` in order).
    pub fn with_params(theta: &[f64]) -> Self {
        let mut t = Tape {
            values: Vec::with_capacity(theta.len() * 4),
            nodes: Vec::with_capacity(theta.len() * 4),
            n_params: theta.len(),
        };
        for &v in theta {
            t.push(v, [0, 0], [0.0, 0.0]);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    /// Parameter leaf `i`.
    #[inline]
    pub fn param(&self, i: usize) -> Var {
        debug_assert!(i < self.n_params);
        Var(i as u32)
    }

    #[inline]
    pub fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    /// Watermark for [`Tape::truncate`]; used to reuse a tape across
    /// sample points without re-recording the parameter leaves.
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    pub fn truncate(&mut self, mark: usize) {
        debug_assert!(mark >= self.n_params);
        self.nodes.truncate(mark);
        self.values.truncate(mark);
    }

    #[inline]
    fn push(&mut self, value: f64, parents: [u32; 2], partials: [f64; 2]) -> Var {
        let idx = self.nodes.len() as u32;
        self.values.push(value);
        self.nodes.push(Node { parents, partials });
        Var(idx)
    }

    /// Non-parameter leaf.
    #[inline]
    pub fn constant(&mut self, c: f64) -> Var {
        self.push(c, [0, 0], [0.0, 0.0])
    }

    #[inline]
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.index()] + self.values[b.index()];
        self.push(v, [a.0, b.0], [1.0, 1.0])
    }

    #[inline]
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.index()] - self.values[b.index()];
        self.push(v, [a.0, b.0], [1.0, -1.0])
    }

    #[inline]
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.values[a.index()], self.values[b.index()]);
        self.push(va * vb, [a.0, b.0], [vb, va])
    }

    #[inline]
    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.values[a.index()];
        self.push(v, [a.0, a.0], [-1.0, 0.0])
    }

    #[inline]
    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.values[a.index()] + c;
        self.push(v, [a.0, a.0], [1.0, 0.0])
    }

    #[inline]
    pub fn mul_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.values[a.index()] * c;
        self.push(v, [a.0, a.0], [c, 0.0])
    }

    #[inline]
    pub fn sqr(&mut self, a: Var) -> Var {
        let va = self.values[a.index()];
        self.push(va * va, [a.0, a.0], [2.0 * va, 0.0])
    }

    #[inline]
    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.values[a.index()].tanh();
        self.push(y, [a.0, a.0], [1.0 - y * y, 0.0])
    }

    #[inline]
    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = 1.0 / (1.0 + (-self.values[a.index()]).exp());
        self.push(y, [a.0, a.0], [y * (1.0 - y), 0.0])
    }

    /// ReLU with derivative 0 at the kink.
    #[inline]
    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.values[a.index()];
        let d = if va > 0.0 { 1.0 } else { 0.0 };
        self.push(va.max(0.0), [a.0, a.0], [d, 0.0])
    }

    /// Heaviside step (derivative of ReLU); its own derivative is 0 a.e.
    #[inline]
    pub fn step(&mut self, a: Var) -> Var {
        let v = if self.values[a.index()] > 0.0 { 1.0 } else { 0.0 };
        self.push(v, [a.0, a.0], [0.0, 0.0])
    }

    #[inline]
    pub fn ln(&mut self, a: Var) -> Var {
        let va = self.values[a.index()];
        self.push(va.ln(), [a.0, a.0], [1.0 / va, 0.0])
    }

    /// Reciprocal 1/a.
    pub fn recip(&mut self, a: Var) -> Var {
        let va = self.values[a.index()];
        self.push(1.0 / va, [a.0, a.0], [-1.0 / (va * va), 0.0])
    }

    /// max(a, c): the clamp used for density floors; derivative 0 below c.
    #[inline]
    pub fn max_const(&mut self, a: Var, c: f64) -> Var {
        let va = self.values[a.index()];
        let d = if va > c { 1.0 } else { 0.0 };
        self.push(va.max(c), [a.0, a.0], [d, 0.0])
    }

    /// Sums in fixed left-to-right order.
    pub fn sum(&mut self, vars: &[Var]) -> Var {
        match vars.split_first() {
            None => self.constant(0.0),
            Some((&first, rest)) => {
                let mut acc = first;
                for &v in rest {
                    acc = self.add(acc, v);
                }
                acc
            }
        }
    }

    /// One reverse sweep: exact gradient of `loss` w.r.t. every parameter
    /// leaf. Deterministic for a fixed tape.
    pub fn gradient(&self, loss: Var) -> Result<Vec<f64>> {
        if !self.values[loss.index()].is_finite() {
            return Err(Error::NonFinite { node: loss.index() });
        }
        let mut adj = vec![0.0f64; self.nodes.len()];
        adj[loss.index()] = 1.0;
        for i in (self.n_params..=loss.index()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            if !a.is_finite() {
                return Err(Error::NonFiniteAdjoint { node: i });
            }
            let node = &self.nodes[i];
            adj[node.parents[0] as usize] += a * node.partials[0];
            adj[node.parents[1] as usize] += a * node.partials[1];
        }
        for i in 0..self.n_params {
            if !adj[i].is_finite() {
                return Err(Error::NonFiniteAdjoint { node: i });
            }
        }
        adj.truncate(self.n_params);
        Ok(adj)
    }
}

/// Value, first spatial derivatives, and (optionally) diagonal second
/// derivatives of a quantity, all as tape nodes.
///
/// When second-derivative tracking is disabled `d2` is `None`, not zero.
#[derive(Clone)]
pub struct Jet {
    pub val: Var,
    pub d1: Vec<Var>,
    pub d2: Option<Vec<Var>>,
}

impl Jet {
    /// Seed jet for input coordinate `i` of the point `x`.
    pub fn input(tape: &mut Tape, x: &[f64], i: usize, order: DerivOrder) -> Jet {
        let val = tape.constant(x[i]);
        let d1 = if order.tracks_gradient() {
            (0..x.len())
                .map(|j| tape.constant(if i == j { 1.0 } else { 0.0 }))
                .collect()
        } else {
            Vec::new()
        };
        let d2 = order
            .tracks_laplacian()
            .then(|| (0..x.len()).map(|_| tape.constant(0.0)).collect());
        Jet { val, d1, d2 }
    }

    /// Laplacian trace Σ_i ∂²/∂x_i², restricted to directions `dirs`.
    pub fn laplacian(&self, tape: &mut Tape, dirs: std::ops::Range<usize>) -> Option<Var> {
        let d2 = self.d2.as_ref()?;
        Some(tape.sum(&d2[dirs]))
    }

    pub fn add(tape: &mut Tape, a: &Jet, b: &Jet) -> Jet {
        let val = tape.add(a.val, b.val);
        let d1 = a
            .d1
            .iter()
            .zip(&b.d1)
            .map(|(&x, &y)| tape.add(x, y))
            .collect();
        let d2 = a.d2.as_ref().map(|ad| {
            ad.iter()
                .zip(b.d2.as_ref().unwrap())
                .map(|(&x, &y)| tape.add(x, y))
                .collect()
        });
        Jet { val, d1, d2 }
    }

    /// Scale by a spatially constant scalar node (e.g. a parameter).
    pub fn scale(tape: &mut Tape, s: Var, j: &Jet) -> Jet {
        let val = tape.mul(s, j.val);
        let d1 = j.d1.iter().map(|&x| tape.mul(s, x)).collect();
        let d2 = j
            .d2
            .as_ref()
            .map(|jd| jd.iter().map(|&x| tape.mul(s, x)).collect());
        Jet { val, d1, d2 }
    }

    /// Add a spatially constant scalar node (e.g. a bias) to the value.
    pub fn shift(tape: &mut Tape, s: Var, j: &Jet) -> Jet {
        Jet {
            val: tape.add(j.val, s),
            d1: j.d1.clone(),
            d2: j.d2.clone(),
        }
    }

    /// Full product rule: (ab)'' = a''b + 2a'b' + ab''.
    pub fn mul(tape: &mut Tape, a: &Jet, b: &Jet) -> Jet {
        let val = tape.mul(a.val, b.val);
        let d1: Vec<Var> = a
            .d1
            .iter()
            .zip(&b.d1)
            .map(|(&ai, &bi)| {
                let t1 = tape.mul(ai, b.val);
                let t2 = tape.mul(a.val, bi);
                tape.add(t1, t2)
            })
            .collect();
        let d2 = a.d2.as_ref().map(|ad| {
            ad.iter()
                .zip(b.d2.as_ref().unwrap())
                .zip(a.d1.iter().zip(&b.d1))
                .map(|((&aii, &bii), (&ai, &bi))| {
                    let t1 = tape.mul(aii, b.val);
                    let cross = tape.mul(ai, bi);
                    let t2 = tape.mul_const(cross, 2.0);
                    let t3 = tape.mul(a.val, bii);
                    let s = tape.add(t1, t2);
                    tape.add(s, t3)
                })
                .collect()
        });
        Jet { val, d1, d2 }
    }

    /// 1 − j, componentwise.
    pub fn one_minus(tape: &mut Tape, j: &Jet) -> Jet {
        let nv = tape.neg(j.val);
        let val = tape.add_const(nv, 1.0);
        let d1 = j.d1.iter().map(|&x| tape.neg(x)).collect();
        let d2 = j
            .d2
            .as_ref()
            .map(|jd| jd.iter().map(|&x| tape.neg(x)).collect());
        Jet { val, d1, d2 }
    }
}
