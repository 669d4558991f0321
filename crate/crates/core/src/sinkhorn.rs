//! Entropy-regularised optimal transport between discrete measures via
//! log-domain Sinkhorn iteration.
//!
//! Convention: the primal variable is P_ij = a_i b_j exp((f_i + g_j − C_ij)/ε)
//! with dual potentials (f, g); at convergence the regularised value equals
//! f·a + g·b, and g is exactly the gradient of that value in the second
//! marginal (the envelope identity the flow solver relies on).

use crate::error::{Error, Result};

/// Weighted point cloud μ = Σ a_i δ_{x_i}; weights strictly positive and
/// summing to one.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<f64>, // flat n×dim
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<DiscreteMeasure> {
        if points.len() != weights.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: weights.len() * dim,
                got: points.len(),
            });
        }
        if weights.is_empty() {
            return Err(Error::EmptyRegion("measure support".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Config("measure weights must be positive".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "measure weights must sum to one (got {s})"
            )));
        }
        Ok(DiscreteMeasure {
            dim,
            points,
            weights,
        })
    }

    /// Normalises arbitrary positive masses to a probability vector.
    pub fn from_masses(dim: usize, points: Vec<f64>, masses: &[f64]) -> Result<DiscreteMeasure> {
        let s: f64 = masses.iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Config(format!("total mass must be positive (got {s})")));
        }
        let weights = masses.iter().map(|m| m / s).collect();
        DiscreteMeasure::new(dim, points, weights)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Squared-Euclidean cost matrix C_ij = |x_i − y_j|², row-major n×m.
pub fn cost_matrix(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Vec<f64>> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    let (n, m) = (mu.len(), nu.len());
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let xi = mu.point(i);
        for j in 0..m {
            let yj = nu.point(j);
            c[i * m + j] = xi
                .iter()
                .zip(yj)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the worst marginal violation of the plan.
    pub tolerance: f64,
}

impl SinkhornParams {
    pub fn new(epsilon: f64) -> SinkhornParams {
        SinkhornParams {
            epsilon,
            max_iterations: 10_000,
            tolerance: 1e-9,
        }
    }
}

/// Solver output; `plan` is row-major n×m.
#[derive(Debug, Clone)]
pub struct SinkhornState {
    pub potential_f: Vec<f64>,
    pub potential_g: Vec<f64>,
    pub plan: Vec<f64>,
    /// ⟨P, C⟩ — the transport cost of the entropic plan.
    pub transport_cost: f64,
    /// f·a + g·b — the regularised (dual) value.
    pub dual_value: f64,
    pub marginal_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = terms.iter().map(|t| (t - m).exp()).sum();
    m + s.ln()
}

/// Log-domain Sinkhorn with optional warm-started potentials.
pub fn sinkhorn(
    cost: &[f64],
    a: &[f64],
    b: &[f64],
    params: &SinkhornParams,
    warm_start: Option<(&[f64], &[f64])>,
) -> Result<SinkhornState> {
    let (n, m) = (a.len(), b.len());
    if cost.len() != n * m {
        return Err(Error::DimensionMismatch {
            expected: n * m,
            got: cost.len(),
        });
    }
    if !(params.epsilon > 0.0) {
        return Err(Error::Config(format!(
            "sinkhorn needs ε > 0 (got {})",
            params.epsilon
        )));
    }
    let eps = params.epsilon;
    let log_a: Vec<f64> = a.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|v| v.ln()).collect();
    let (mut f, mut g) = match warm_start {
        Some((wf, wg)) => (wf.to_vec(), wg.to_vec()),
        None => (vec![0.0; n], vec![0.0; m]),
    };

    let mut buf = vec![0.0; n.max(m)];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=params.max_iterations {
        iterations = it;
        // f_i ← −ε·LSE_j[log b_j + (g_j − C_ij)/ε]
        for i in 0..n {
            for j in 0..m {
                buf[j] = log_b[j] + (g[j] - cost[i * m + j]) / eps;
            }
            f[i] = -eps * log_sum_exp(&buf[..m]);
        }
        // g_j ← −ε·LSE_i[log a_i + (f_i − C_ij)/ε]
        for j in 0..m {
            for i in 0..n {
                buf[i] = log_a[i] + (f[i] - cost[i * m + j]) / eps;
            }
            g[j] = -eps * log_sum_exp(&buf[..n]);
        }
        // after the g-update column marginals are exact; check rows
        residual = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..m {
                row += a[i] * b[j] * ((f[i] + g[j] - cost[i * m + j]) / eps).exp();
            }
            residual = residual.max((row - a[i]).abs());
        }
        if residual < params.tolerance {
            converged = true;
            break;
        }
    }
    if f.iter().chain(&g).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            node: usize::MAX,
        });
    }

    let mut plan = vec![0.0; n * m];
    let mut transport_cost = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = a[i] * b[j] * ((f[i] + g[j] - cost[i * m + j]) / eps).exp();
            plan[i * m + j] = p;
            transport_cost += p * cost[i * m + j];
        }
    }
    let dual_value = f.iter().zip(a).map(|(x, y)| x * y).sum::<f64>()
        + g.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    Ok(SinkhornState {
        potential_f: f,
        potential_g: g,
        plan,
        transport_cost,
        dual_value,
        marginal_residual: residual,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_measure(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> DiscreteMeasure {
        let points: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        let masses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        DiscreteMeasure::from_masses(dim, points, &masses).unwrap()
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(DiscreteMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.6]).is_err());
        assert!(DiscreteMeasure::new(1, vec![0.0, 1.0], vec![1.1, -0.1]).is_err());
        assert!(DiscreteMeasure::new(1, vec![0.0], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn single_atom_pair_is_exact() {
        let mu = DiscreteMeasure::new(2, vec![0.0, 0.0], vec![1.0]).unwrap();
        let nu = DiscreteMeasure::new(2, vec![3.0, 4.0], vec![1.0]).unwrap();
        let c = cost_matrix(&mu, &nu).unwrap();
        assert_eq!(c, vec![25.0]);
        let st = sinkhorn(&c, mu.weights(), nu.weights(), &SinkhornParams::new(0.1), None).unwrap();
        assert!(st.converged);
        assert!((st.plan[0] - 1.0).abs() < 1e-12);
        assert!((st.transport_cost - 25.0).abs() < 1e-10);
    }

    // Symmetric 2×2 with unit off-diagonal cost: the entropic plan is known
    // in closed form, with off-diagonal mass q = ½·e^{−1/ε}/(1 + e^{−1/ε})
    // per row, hence ⟨P,C⟩ = e^{−1/ε}/(1 + e^{−1/ε}).
    #[test]
    fn symmetric_two_atom_closed_form() {
        let a = [0.5, 0.5];
        let cost = [0.0, 1.0, 1.0, 0.0];
        for eps in [0.5, 0.2, 0.1] {
            let mut p = SinkhornParams::new(eps);
            p.tolerance = 1e-13;
            let st = sinkhorn(&cost, &a, &a, &p, None).unwrap();
            assert!(st.converged);
            let k = (-1.0 / eps).exp();
            let expect = k / (1.0 + k);
            assert!(
                (st.transport_cost - expect).abs() < 1e-10,
                "ε = {eps}: {} vs {expect}",
                st.transport_cost
            );
        }
    }

    #[test]
    fn marginals_match_to_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mu = random_measure(50, 2, &mut rng);
        let nu = random_measure(40, 2, &mut rng);
        let c = cost_matrix(&mu, &nu).unwrap();
        let st = sinkhorn(&c, mu.weights(), nu.weights(), &SinkhornParams::new(0.01), None)
            .unwrap();
        assert!(st.converged, "residual {}", st.marginal_residual);
        let (n, m) = (mu.len(), nu.len());
        for i in 0..n {
            let row: f64 = (0..m).map(|j| st.plan[i * m + j]).sum();
            assert!((row - mu.weights()[i]).abs() < 1e-9);
        }
        for j in 0..m {
            let col: f64 = (0..n).map(|i| st.plan[i * m + j]).sum();
            assert!((col - nu.weights()[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_measures_have_small_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu = random_measure(20, 2, &mut rng);
        let c = cost_matrix(&mu, &mu).unwrap();
        let mut p = SinkhornParams::new(0.001);
        p.max_iterations = 200_000;
        // at this ε the achievable residual is limited by round-off in the
        // rescaled exponents, a bit above the default tolerance
        p.tolerance = 1e-8;
        let st = sinkhorn(&c, mu.weights(), mu.weights(), &p, None).unwrap();
        assert!(st.converged, "residual {}", st.marginal_residual);
        assert!(st.transport_cost >= 0.0);
        assert!(st.transport_cost < 0.01, "{}", st.transport_cost);
    }

    #[test]
    fn transport_cost_monotone_in_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mu = random_measure(15, 2, &mut rng);
        let nu = random_measure(15, 2, &mut rng);
        let c = cost_matrix(&mu, &nu).unwrap();
        let mut last = f64::INFINITY;
        for eps in [0.1, 0.01, 0.001] {
            let st = sinkhorn(&c, mu.weights(), nu.weights(), &SinkhornParams::new(eps), None)
                .unwrap();
            assert!(st.converged);
            assert!(
                st.transport_cost <= last + 1e-12,
                "cost rose from {last} to {} at ε = {eps}",
                st.transport_cost
            );
            last = st.transport_cost;
        }
    }

    // Envelope identity: d/db in a mass-preserving direction equals the
    // matching difference of g-potentials.
    #[test]
    fn dual_potential_is_marginal_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mu = random_measure(12, 2, &mut rng);
        let nu = random_measure(10, 2, &mut rng);
        let c = cost_matrix(&mu, &nu).unwrap();
        let mut p = SinkhornParams::new(0.05);
        p.tolerance = 1e-13;
        let value = |b: &[f64]| {
            sinkhorn(&c, mu.weights(), b, &p, None).unwrap().dual_value
        };
        let st = sinkhorn(&c, mu.weights(), nu.weights(), &p, None).unwrap();
        let h = 1e-6;
        let (j, l) = (2, 7);
        let mut bp = nu.weights().to_vec();
        bp[j] += h;
        bp[l] -= h;
        let mut bm = nu.weights().to_vec();
        bm[j] -= h;
        bm[l] += h;
        let fd = (value(&bp) - value(&bm)) / (2.0 * h);
        let analytic = st.potential_g[j] - st.potential_g[l];
        assert!(
            (fd - analytic).abs() < 1e-5,
            "envelope: FD {fd} vs g_j − g_l = {analytic}"
        );
    }

    #[test]
    fn warm_start_converges_faster() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mu = random_measure(25, 2, &mut rng);
        let nu = random_measure(25, 2, &mut rng);
        let c = cost_matrix(&mu, &nu).unwrap();
        let p = SinkhornParams::new(0.02);
        let cold = sinkhorn(&c, mu.weights(), nu.weights(), &p, None).unwrap();
        let warm = sinkhorn(
            &c,
            mu.weights(),
            nu.weights(),
            &p,
            Some((&cold.potential_f, &cold.potential_g)),
        )
        .unwrap();
        assert!(warm.converged);
        assert!(warm.iterations <= cold.iterations);
        assert!(warm.iterations <= 2, "{}", warm.iterations);
    }
}
