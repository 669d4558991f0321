//! Anything trainable by the drivers: a parameter vector plus forward
//! evaluation, with or without a tape.

use crate::autodiff::{DerivOrder, Jet, Tape};
use crate::error::Result;
use crate::network::Network;

pub trait Model {
    fn input_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Record the forward pass on `tape` (parameter leaves = this model's
    /// params, in order) and return the spatial jet.
    fn record_jet(&self, tape: &mut Tape, x: &[f64], order: DerivOrder) -> Result<Jet>;
    fn value(&self, x: &[f64]) -> f64;
    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>);

    fn param_count(&self) -> usize {
        self.params().len()
    }
}

impl Model for Network {
    fn input_dim(&self) -> usize {
        Network::input_dim(self)
    }

    fn params(&self) -> &[f64] {
        Network::params(self)
    }

    fn params_mut(&mut self) -> &mut [f64] {
        Network::params_mut(self)
    }

    fn record_jet(&self, tape: &mut Tape, x: &[f64], order: DerivOrder) -> Result<Jet> {
        self.record_forward(tape, x, order)
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.forward(x)
    }

    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.forward_grad(x)
    }
}

/// Spec alias: record a model evaluation plan at a spatial point.
pub fn record_forward<M: Model>(
    model: &M,
    tape: &mut Tape,
    x: &[f64],
    order: DerivOrder,
) -> Result<Jet> {
    model.record_jet(tape, x, order)
}

/// A linear-in-parameter model w(x) = Σ θ_i φ_i(x) over a fixed feature
/// basis. Its step loss is an exactly solvable quadratic, which makes it the
/// workhorse of the backward-Euler oracle tests.
#[derive(Clone)]
pub struct LinearModel {
    dim: usize,
    theta: Vec<f64>,
    features: Vec<Feature>,
}

/// One smooth basis function with analytic derivatives:
/// φ(x) = Π_i cos(π k_i x_i + s_i).
#[derive(Clone)]
pub struct Feature {
    pub freqs: Vec<f64>,
    pub shifts: Vec<f64>,
}

impl Feature {
    fn eval(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.freqs)
            .zip(&self.shifts)
            .map(|((xi, k), s)| (std::f64::consts::PI * k * xi + s).cos())
            .product()
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let pi = std::f64::consts::PI;
        (0..x.len())
            .map(|i| {
                let mut g = 1.0;
                for j in 0..x.len() {
                    let arg = pi * self.freqs[j] * x[j] + self.shifts[j];
                    g *= if i == j {
                        -pi * self.freqs[j] * arg.sin()
                    } else {
                        arg.cos()
                    };
                }
                g
            })
            .collect()
    }

    fn lap(&self, x: &[f64]) -> f64 {
        let pi = std::f64::consts::PI;
        let v = self.eval(x);
        -v * self
            .freqs
            .iter()
            .map(|k| (pi * k) * (pi * k))
            .sum::<f64>()
    }
}

impl LinearModel {
    pub fn new(dim: usize, features: Vec<Feature>) -> LinearModel {
        let n = features.len();
        LinearModel {
            dim,
            theta: vec![0.0; n],
            features,
        }
    }

    /// Tensor-product cosine basis with per-axis frequencies 0..k_max.
    pub fn cosine_basis(dim: usize, k_max: usize) -> LinearModel {
        let mut features = Vec::new();
        let mut idx = vec![0usize; dim];
        loop {
            features.push(Feature {
                freqs: idx.iter().map(|&k| k as f64).collect(),
                shifts: vec![0.0; dim],
            });
            let mut axis = 0;
            loop {
                if axis == dim {
                    return LinearModel::new(dim, features);
                }
                idx[axis] += 1;
                if idx[axis] <= k_max {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
        }
    }

    pub fn feature_values(&self, x: &[f64]) -> Vec<f64> {
        self.features.iter().map(|f| f.eval(x)).collect()
    }

    pub fn feature_grads(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.features.iter().map(|f| f.grad(x)).collect()
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }
}

impl Model for LinearModel {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn record_jet(&self, tape: &mut Tape, x: &[f64], order: DerivOrder) -> Result<Jet> {
        use crate::autodiff::Var;
        let mut val_terms: Vec<Var> = Vec::with_capacity(self.features.len());
        let mut d1_terms: Vec<Vec<Var>> = vec![Vec::new(); x.len()];
        let mut d2_terms: Vec<Var> = Vec::new();
        for (i, feat) in self.features.iter().enumerate() {
            let p = tape.param(i);
            let v = feat.eval(x);
            val_terms.push(tape.mul_const(p, v));
            if order.tracks_gradient() {
                for (k, gk) in feat.grad(x).iter().enumerate() {
                    let t = tape.mul_const(p, *gk);
                    d1_terms[k].push(t);
                }
            }
            if order.tracks_laplacian() {
                let l = feat.lap(x);
                d2_terms.push(tape.mul_const(p, l));
            }
        }
        let val = tape.sum(&val_terms);
        let d1 = if order.tracks_gradient() {
            d1_terms.iter().map(|ts| tape.sum(ts)).collect()
        } else {
            Vec::new()
        };
        // The Laplacian is stored in the first diagonal slot with the rest
        // zero; only the trace is ever consumed downstream.
        let d2 = order.tracks_laplacian().then(|| {
            let lap = tape.sum(&d2_terms);
            let mut v = vec![lap];
            for _ in 1..x.len() {
                v.push(tape.constant(0.0));
            }
            v
        });
        Ok(Jet { val, d1, d2 })
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.features
            .iter()
            .zip(&self.theta)
            .map(|(f, t)| t * f.eval(x))
            .sum()
    }

    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; x.len()];
        let mut v = 0.0;
        for (f, t) in self.features.iter().zip(&self.theta) {
            v += t * f.eval(x);
            for (gi, fi) in g.iter_mut().zip(f.grad(x)) {
                *gi += t * fi;
            }
        }
        (v, g)
    }
}
