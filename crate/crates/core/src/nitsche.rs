//! The discrete Nitsche energy Ñ(w;v), the adaptive penalty γ (pointwise and
//! max forms), and the coercivity lower bound.

use crate::autodiff::{DerivOrder, Tape, Var};
use crate::domain::{match_nearest_interior, PointClouds};
use crate::error::{Error, Result};
use crate::model::Model;

/// Constant symmetric diffusion tensor A with eigenvalue bounds.
#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    dim: usize,
    matrix: Option<Vec<f64>>, // row-major d×d; None ⇒ identity
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl DiffusionSpec {
    pub fn identity(dim: usize) -> DiffusionSpec {
        DiffusionSpec {
            dim,
            matrix: None,
            lambda_min: 1.0,
            lambda_max: 1.0,
        }
    }

    /// Constant matrix; eigenvalue bounds from a Jacobi eigendecomposition.
    pub fn constant(dim: usize, matrix: Vec<f64>) -> Result<DiffusionSpec> {
        if matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: matrix.len(),
            });
        }
        for i in 0..dim {
            for j in 0..i {
                if (matrix[i * dim + j] - matrix[j * dim + i]).abs() > 1e-12 {
                    return Err(Error::Config("diffusion tensor must be symmetric".into()));
                }
            }
        }
        let eigs = jacobi_eigenvalues(&matrix, dim);
        let lambda_min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let lambda_max = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lambda_min <= 0.0 {
            return Err(Error::Config(format!(
                "diffusion tensor must be positive definite (λ_min = {lambda_min})"
            )));
        }
        Ok(DiffusionSpec {
            dim,
            matrix: Some(matrix),
            lambda_min,
            lambda_max,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// gᵀ A g as plain f64.
    pub fn quad_form(&self, g: &[f64]) -> f64 {
        match &self.matrix {
            None => g.iter().map(|v| v * v).sum(),
            Some(a) => {
                let d = self.dim;
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        s += g[i] * a[i * d + j] * g[j];
                    }
                }
                s
            }
        }
    }

    /// gᵀ A g on the tape (|√A ∇w|²).
    pub fn tape_quad_form(&self, tape: &mut Tape, g: &[Var]) -> Var {
        match &self.matrix {
            None => {
                let sq: Vec<Var> = g.iter().map(|&v| tape.sqr(v)).collect();
                tape.sum(&sq)
            }
            Some(a) => {
                let d = self.dim;
                let mut terms = Vec::with_capacity(d * d);
                for i in 0..d {
                    for j in 0..d {
                        let p = tape.mul(g[i], g[j]);
                        terms.push(tape.mul_const(p, a[i * d + j]));
                    }
                }
                tape.sum(&terms)
            }
        }
    }

    /// n·A g on the tape for an axis-aligned unit normal.
    pub fn tape_normal_flux(&self, tape: &mut Tape, normal: &[f64], g: &[Var]) -> Var {
        let axis = normal
            .iter()
            .position(|&v| v != 0.0)
            .expect("unit axis-aligned normal");
        let sign = normal[axis];
        match &self.matrix {
            None => tape.mul_const(g[axis], sign),
            Some(a) => {
                let d = self.dim;
                let terms: Vec<Var> = (0..d)
                    .map(|j| tape.mul_const(g[j], a[axis * d + j]))
                    .collect();
                let s = tape.sum(&terms);
                tape.mul_const(s, sign)
            }
        }
    }

    /// n·A g as plain f64.
    pub fn normal_flux(&self, normal: &[f64], g: &[f64]) -> f64 {
        let axis = normal.iter().position(|&v| v != 0.0).unwrap();
        let sign = normal[axis];
        match &self.matrix {
            None => sign * g[axis],
            Some(a) => {
                let d = self.dim;
                sign * (0..d).map(|j| a[axis * d + j] * g[j]).sum::<f64>()
            }
        }
    }
}

// Cyclic Jacobi sweeps; d is small here.
fn jacobi_eigenvalues(matrix: &[f64], d: usize) -> Vec<f64> {
    let mut a = matrix.to_vec();
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += a[p * d + q] * a[p * d + q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..d).map(|i| a[i * d + i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyMode {
    /// Per-boundary-point τ(x_n^D) with safety factor 8 (the coercivity rule).
    Pointwise,
    /// One constant: the max over boundary points of the factor-500 expression.
    Max,
}

#[derive(Debug, Clone, Copy)]
pub struct PenaltyConfig {
    pub mode: PenaltyMode,
    pub factor: f64,
    /// Floor applied to every returned value; guards the all-zero-gradient
    /// degenerate start.
    pub gamma_min: f64,
}

impl PenaltyConfig {
    pub fn pointwise() -> PenaltyConfig {
        PenaltyConfig {
            mode: PenaltyMode::Pointwise,
            factor: 8.0,
            gamma_min: 1.0,
        }
    }

    pub fn max() -> PenaltyConfig {
        PenaltyConfig {
            mode: PenaltyMode::Max,
            factor: 500.0,
            gamma_min: 1.0,
        }
    }
}

/// |Γ_D|·N_I·λd² / (|Ω|·N_D·λ1) — the geometry factor of the penalty rule.
pub fn penalty_base(clouds: &PointClouds, diffusion: &DiffusionSpec) -> f64 {
    clouds.dirichlet_area * clouds.interior.len() as f64 * diffusion.lambda_max.powi(2)
        / (clouds.volume * clouds.dirichlet.len() as f64 * diffusion.lambda_min)
}

/// Per-boundary-point penalty values.
///
/// `matching[n]` is the interior index matched to boundary point `n`; `None`
/// signals the fallback (no valid matching existed), which returns
/// `max(γ_min, factor·base)` everywhere with a diagnostic.
pub fn penalty(
    clouds: &PointClouds,
    boundary_grad_norms: &[f64],
    interior_grad_norms: &[f64],
    matching: Option<&[usize]>,
    config: &PenaltyConfig,
    diffusion: &DiffusionSpec,
) -> Vec<f64> {
    let n_b = clouds.dirichlet.len();
    if n_b == 0 {
        return Vec::new();
    }
    let base = penalty_base(clouds, diffusion);
    let matching = match matching {
        Some(m) => m,
        None => {
            log::warn!(
                "penalty: no valid interior matching; falling back to γ = max(γ_min, factor·base)"
            );
            return vec![(config.factor * base).max(config.gamma_min); n_b];
        }
    };
    debug_assert_eq!(matching.len(), n_b);
    let ratios: Vec<f64> = (0..n_b)
        .map(|n| {
            let gb = boundary_grad_norms[n];
            let gi = interior_grad_norms[matching[n]];
            (gb * gb) / (gi * gi)
        })
        .collect();
    match config.mode {
        PenaltyMode::Pointwise => ratios
            .iter()
            .map(|r| (config.factor * base * r).max(config.gamma_min))
            .collect(),
        PenaltyMode::Max => {
            let gamma = ratios
                .iter()
                .map(|r| config.factor * base * r)
                .fold(f64::NEG_INFINITY, f64::max)
                .max(config.gamma_min);
            vec![gamma; n_b]
        }
    }
}

/// Gradient norms |∇w| of a model over a cloud.
pub fn grad_norms<M: Model>(model: &M, cloud: &crate::domain::Cloud) -> Vec<f64> {
    cloud
        .iter()
        .map(|x| {
            let (_, g) = model.value_grad(x);
            g.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .collect()
}

/// Penalty evaluated from a (frozen) model state: gradient norms, nearest
/// matching, then the rule. The matching shortage falls back as documented
/// on [`penalty`].
pub fn penalty_from_model<M: Model>(
    model: &M,
    clouds: &PointClouds,
    config: &PenaltyConfig,
    diffusion: &DiffusionSpec,
) -> Vec<f64> {
    if clouds.dirichlet.is_empty() {
        return Vec::new();
    }
    let interior_norms = grad_norms(model, &clouds.interior);
    let boundary_norms = grad_norms(model, &clouds.dirichlet);
    match match_nearest_interior(clouds, &interior_norms) {
        Ok(m) => penalty(
            clouds,
            &boundary_norms,
            &interior_norms,
            Some(&m),
            config,
            diffusion,
        ),
        Err(_) => penalty(clouds, &boundary_norms, &interior_norms, None, config, diffusion),
    }
}

/// Problem data restricted to one time slice.
pub struct SpatialData<'a> {
    pub forcing: &'a dyn Fn(&[f64]) -> f64,
    pub dirichlet: &'a dyn Fn(&[f64]) -> f64,
    pub neumann: &'a dyn Fn(&[f64]) -> f64,
}

/// The discrete Nitsche energy
///   (|Ω|/N_I)Σ(½|√A∇w|² − Fw)
///   − (|Γ_D|/N_D)Σ n·A∇w·(w−g_D)
///   + (|Γ_D|/N_D)Σ (γ/2)(w−g_D)²
///   − (|Γ_N|/N_N)Σ g_N w,
/// differentiable w.r.t. the model parameters; penalty values enter as
/// constants.
pub fn nitsche_functional<M: Model>(
    model: &M,
    penalty_values: &[f64],
    clouds: &PointClouds,
    data: &SpatialData,
    diffusion: &DiffusionSpec,
    tape: &mut Tape,
) -> Result<Var> {
    debug_assert_eq!(penalty_values.len(), clouds.dirichlet.len());

    let mut acc: Option<Var> = None;
    let mut add_in = |tape: &mut Tape, v: Var| {
        acc = Some(match acc {
            None => v,
            Some(a) => tape.add(a, v),
        });
    };

    // interior energy
    let mut interior: Option<Var> = None;
    for (i, x) in clouds.interior.iter().enumerate() {
        let jet = model.record_jet(tape, x, DerivOrder::Gradient)?;
        let q = diffusion.tape_quad_form(tape, &jet.d1);
        let half_q = tape.mul_const(q, 0.5);
        let fw = tape.mul_const(jet.val, (data.forcing)(x));
        let term = tape.sub(half_q, fw);
        if !tape.value(term).is_finite() {
            return Err(Error::NonFiniteTerm {
                context: "nitsche interior",
                index: i,
            });
        }
        interior = Some(match interior {
            None => term,
            Some(a) => tape.add(a, term),
        });
    }
    if let Some(s) = interior {
        let v = tape.mul_const(s, clouds.interior_weight());
        add_in(tape, v);
    }

    // Dirichlet consistency and penalty
    if !clouds.dirichlet.is_empty() {
        let mut consistency: Option<Var> = None;
        let mut pen: Option<Var> = None;
        for (i, x) in clouds.dirichlet.iter().enumerate() {
            let jet = model.record_jet(tape, x, DerivOrder::Gradient)?;
            let normal = clouds.dirichlet_normal(i);
            let flux = diffusion.tape_normal_flux(tape, &normal, &jet.d1);
            let mismatch = tape.add_const(jet.val, -(data.dirichlet)(x));
            let cons_term = tape.mul(flux, mismatch);
            let m2 = tape.sqr(mismatch);
            let pen_term = tape.mul_const(m2, 0.5 * penalty_values[i]);
            if !(tape.value(cons_term).is_finite() && tape.value(pen_term).is_finite()) {
                return Err(Error::NonFiniteTerm {
                    context: "nitsche dirichlet",
                    index: i,
                });
            }
            consistency = Some(match consistency {
                None => cons_term,
                Some(a) => tape.add(a, cons_term),
            });
            pen = Some(match pen {
                None => pen_term,
                Some(a) => tape.add(a, pen_term),
            });
        }
        let w = clouds.dirichlet_weight();
        let c = tape.mul_const(consistency.unwrap(), -w);
        add_in(tape, c);
        let p = tape.mul_const(pen.unwrap(), w);
        add_in(tape, p);
    }

    // Neumann data term
    if !clouds.neumann.is_empty() {
        let mut neu: Option<Var> = None;
        for (i, x) in clouds.neumann.iter().enumerate() {
            let jet = model.record_jet(tape, x, DerivOrder::Value)?;
            let term = tape.mul_const(jet.val, (data.neumann)(x));
            if !tape.value(term).is_finite() {
                return Err(Error::NonFiniteTerm {
                    context: "nitsche neumann",
                    index: i,
                });
            }
            neu = Some(match neu {
                None => term,
                Some(a) => tape.add(a, term),
            });
        }
        let v = tape.mul_const(neu.unwrap(), -clouds.neumann_weight());
        add_in(tape, v);
    }

    Ok(match acc {
        Some(v) => v,
        None => tape.constant(0.0),
    })
}

/// The coercivity lower bound
///   (|Ω|/N_I)Σ(¼|√A∇w|² − Fw) + (|Γ_D|/N_D)Σ(γ/4)(w−g_D)²
///   − (|Γ_N|/N_N)Σ g_N w.
pub fn coercivity_bound<M: Model>(
    model: &M,
    clouds: &PointClouds,
    penalty_values: &[f64],
    data: &SpatialData,
    diffusion: &DiffusionSpec,
) -> f64 {
    let mut total = 0.0;
    let mut interior = 0.0;
    for x in clouds.interior.iter() {
        let (v, g) = model.value_grad(x);
        interior += 0.25 * diffusion.quad_form(&g) - (data.forcing)(x) * v;
    }
    total += interior * clouds.interior_weight();
    if !clouds.dirichlet.is_empty() {
        let mut pen = 0.0;
        for (i, x) in clouds.dirichlet.iter().enumerate() {
            let v = model.value(x);
            let mismatch = v - (data.dirichlet)(x);
            pen += 0.25 * penalty_values[i] * mismatch * mismatch;
        }
        total += pen * clouds.dirichlet_weight();
    }
    if !clouds.neumann.is_empty() {
        let mut neu = 0.0;
        for x in clouds.neumann.iter() {
            neu += (data.neumann)(x) * model.value(x);
        }
        total -= neu * clouds.neumann_weight();
    }
    total
}
