//! Manufactured benchmark problems with known exact solutions on the unit
//! cube.

use crate::domain::{BoxDomain, FaceLabel};
use crate::flow::TimeDependentData;
use crate::nitsche::DiffusionSpec;

type TimeFn = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type SpaceFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A heat-type evolution problem ∂_t u = ∇·(A∇u) + F on a box, with exact
/// solution attached for error reporting.
pub struct Problem {
    pub name: String,
    pub dim: usize,
    pub domain: BoxDomain,
    pub diffusion: DiffusionSpec,
    pub initial: SpaceFn,
    pub forcing: TimeFn,
    pub dirichlet: TimeFn,
    pub neumann: TimeFn,
    pub exact: TimeFn,
}

impl Problem {
    pub fn data(&self) -> TimeDependentData<'_> {
        TimeDependentData {
            forcing: &*self.forcing,
            dirichlet: &*self.dirichlet,
            neumann: &*self.neumann,
        }
    }
}

/// u(t, x) = sin(t)·sin(Σ x_i) on [0,1]^d with Dirichlet boundary.
/// Then ∂_t u − Δu = cos(t) sin(Σx) + d·sin(t) sin(Σx) =: F and u_0 ≡ 0.
pub fn dirichlet_sine(dim: usize) -> Problem {
    let exact = move |t: f64, x: &[f64]| t.sin() * x.iter().sum::<f64>().sin();
    let d = dim as f64;
    Problem {
        name: format!("dirichlet-sine-{dim}d"),
        dim,
        domain: BoxDomain::unit_cube(dim, FaceLabel::Dirichlet),
        diffusion: DiffusionSpec::identity(dim),
        initial: Box::new(|_| 0.0),
        forcing: Box::new(move |t, x| {
            let s = x.iter().sum::<f64>().sin();
            t.cos() * s + d * t.sin() * s
        }),
        dirichlet: Box::new(exact),
        neumann: Box::new(|_, _| 0.0),
        exact: Box::new(exact),
    }
}

/// u(t, x) = ½(e^{−dπ²t} Π cos(πx_i) + 2) on [0,1]^d with homogeneous
/// Neumann boundary: a mass-one density relaxing towards the uniform one,
/// F = 0, g_N = 0.
pub fn neumann_product(dim: usize) -> Problem {
    let d = dim as f64;
    let exact = move |t: f64, x: &[f64]| {
        let p: f64 = x
            .iter()
            .map(|&v| (std::f64::consts::PI * v).cos())
            .product();
        0.5 * ((-d * std::f64::consts::PI.powi(2) * t).exp() * p + 2.0)
    };
    Problem {
        name: format!("neumann-product-{dim}d"),
        dim,
        domain: BoxDomain::unit_cube(dim, FaceLabel::Neumann),
        diffusion: DiffusionSpec::identity(dim),
        initial: Box::new(move |x| exact(0.0, x)),
        forcing: Box::new(|_, _| 0.0),
        dirichlet: Box::new(|_, _| 0.0),
        neumann: Box::new(|_, _| 0.0),
        exact: Box::new(exact),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // 4th-order central differences for ∂_t u and Δu.
    fn fd_residual(p: &Problem, t: f64, x: &[f64]) -> f64 {
        let h = 1e-3;
        let u = |t: f64, x: &[f64]| (p.exact)(t, x);
        let d4 = |f: &dyn Fn(f64) -> f64, v: f64| {
            (-f(v + 2.0 * h) + 8.0 * f(v + h) - 8.0 * f(v - h) + f(v - 2.0 * h)) / (12.0 * h)
        };
        let dd4 = |f: &dyn Fn(f64) -> f64, v: f64| {
            (-f(v + 2.0 * h) + 16.0 * f(v + h) - 30.0 * f(v) + 16.0 * f(v - h) - f(v - 2.0 * h))
                / (12.0 * h * h)
        };
        let ut = d4(&|s| u(s, x), t);
        let mut lap = 0.0;
        for i in 0..p.dim {
            lap += dd4(
                &|v| {
                    let mut y = x.to_vec();
                    y[i] = v;
                    u(t, &y)
                },
                x[i],
            );
        }
        ut - lap - (p.forcing)(t, x)
    }

    // The manufactured data must satisfy the PDE: residual ≈ 0 by FD.
    #[test]
    fn exact_solutions_satisfy_pde() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for p in [dirichlet_sine(2), dirichlet_sine(3), neumann_product(2)] {
            for _ in 0..20 {
                let t = rng.gen_range(0.1..1.0);
                let x: Vec<f64> = (0..p.dim).map(|_| rng.gen_range(0.2..0.8)).collect();
                let r = fd_residual(&p, t, &x);
                assert!(r.abs() < 1e-8, "{}: residual {r} at t={t}, x={x:?}", p.name);
            }
        }
    }

    #[test]
    fn dirichlet_initial_state_is_zero() {
        let p = dirichlet_sine(4);
        assert_eq!((p.initial)(&[0.3, 0.4, 0.1, 0.9]), 0.0);
        assert_eq!((p.exact)(0.0, &[0.3, 0.4, 0.1, 0.9]), 0.0);
    }

    // ∫ u dx = 1 for the Neumann density at every time (MC to 3σ).
    #[test]
    fn neumann_density_has_unit_mass() {
        let p = neumann_product(3);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for t in [0.0, 0.05, 0.5] {
            let n = 20_000;
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..n {
                let x: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
                let v = (p.exact)(t, &x);
                s += v;
                s2 += v * v;
            }
            let mean = s / n as f64;
            let sigma = ((s2 / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
            assert!(
                (mean - 1.0).abs() < 3.0 * sigma + 1e-6,
                "t={t}: mass {mean} ± {sigma}"
            );
        }
    }

    // Neumann data really is homogeneous: ∂u/∂n = 0 on every face.
    #[test]
    fn neumann_flux_vanishes_on_boundary() {
        let p = neumann_product(2);
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let t = rng.gen_range(0.0..0.5);
            let other = rng.gen::<f64>();
            for (axis, pin) in [(0, 0.0), (0, 1.0), (1, 0.0), (1, 1.0)] {
                let mut xp = [other, other];
                let mut xm = [other, other];
                xp[axis] = pin + h;
                xm[axis] = pin - h;
                let du = ((p.exact)(t, &xp) - (p.exact)(t, &xm)) / (2.0 * h);
                assert!(du.abs() < 1e-9, "flux {du} at axis {axis}, side {pin}");
            }
        }
    }
}
