//! Error reporting against exact solutions on seeded test clouds.

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::flow::{mix_seed, Trajectory};
use crate::jko::JkoTrajectory;
use crate::network::Network;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Errors at one time node.
#[derive(Debug, Clone, Copy)]
pub struct ErrorRow {
    pub time: f64,
    /// √(Σ(u−û)² / Σu²) over the test cloud.
    pub rel_l2: f64,
    pub max_abs: f64,
    pub mean_abs: f64,
}

#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
    pub n_test: usize,
}

impl ErrorReport {
    pub fn worst_rel_l2(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_l2).fold(0.0, f64::max)
    }

    pub fn final_rel_l2(&self) -> f64 {
        self.rows.last().map(|r| r.rel_l2).unwrap_or(f64::NAN)
    }
}

fn row_errors(
    time: f64,
    approx: &dyn Fn(&[f64]) -> f64,
    exact: &dyn Fn(f64, &[f64]) -> f64,
    domain: &BoxDomain,
    n_test: usize,
    seed: u64,
) -> Result<ErrorRow> {
    if n_test == 0 {
        return Err(Error::Config("error evaluation needs test points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut sum_abs = 0.0;
    for _ in 0..n_test {
        let x = domain.sample_point(&mut rng);
        let u = exact(time, &x);
        let e = u - approx(&x);
        num += e * e;
        den += u * u;
        max_abs = max_abs.max(e.abs());
        sum_abs += e.abs();
    }
    Ok(ErrorRow {
        time,
        rel_l2: if den > 0.0 { (num / den).sqrt() } else { num.sqrt() },
        max_abs,
        mean_abs: sum_abs / n_test as f64,
    })
}

/// Errors of a time-marching trajectory at t_1, …, t_{N_t}. Test clouds are
/// drawn per (seed, k) and are independent of the training clouds.
pub fn evaluate_trajectory(
    networks: &[Network],
    tau: f64,
    exact: &dyn Fn(f64, &[f64]) -> f64,
    domain: &BoxDomain,
    n_test: usize,
    seed: u64,
) -> Result<ErrorReport> {
    let mut rows = Vec::new();
    for (k, net) in networks.iter().enumerate().skip(1) {
        let t = tau * k as f64;
        rows.push(row_errors(
            t,
            &|x| net.forward(x),
            exact,
            domain,
            n_test,
            mix_seed(seed, k as u64, u64::MAX),
        )?);
    }
    Ok(ErrorReport { rows, n_test })
}

pub fn evaluate_flow(
    traj: &Trajectory,
    exact: &dyn Fn(f64, &[f64]) -> f64,
    domain: &BoxDomain,
    n_test: usize,
    seed: u64,
) -> Result<ErrorReport> {
    evaluate_trajectory(&traj.networks, traj.tau, exact, domain, n_test, seed)
}

pub fn evaluate_jko(
    traj: &JkoTrajectory,
    exact: &dyn Fn(f64, &[f64]) -> f64,
    domain: &BoxDomain,
    n_test: usize,
    seed: u64,
) -> Result<ErrorReport> {
    // The minimising-movement objective is invariant under rescaling of the
    // raw network output (only the normalised density enters), so
    // predictions are compared as mass-normalised densities
    // û = max(w, floor) / ∫w, with the mass estimated by MC on its own cloud.
    let mut rows = Vec::new();
    for (k, net) in traj.networks.iter().enumerate().skip(1) {
        let t = traj.tau * k as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64, u64::MAX - 1));
        let mut mass = 0.0;
        for _ in 0..n_test {
            let x = domain.sample_point(&mut rng);
            mass += net.forward(&x).max(crate::jko::DENSITY_FLOOR);
        }
        mass *= domain.volume() / n_test as f64;
        rows.push(row_errors(
            t,
            &|x| net.forward(x).max(crate::jko::DENSITY_FLOOR) / mass,
            exact,
            domain,
            n_test,
            mix_seed(seed, k as u64, u64::MAX),
        )?);
    }
    Ok(ErrorReport { rows, n_test })
}

/// Errors of a space-time network w(t, x) at the given time nodes.
pub fn evaluate_spacetime(
    net: &Network,
    times: &[f64],
    exact: &dyn Fn(f64, &[f64]) -> f64,
    domain: &BoxDomain,
    n_test: usize,
    seed: u64,
) -> Result<ErrorReport> {
    let d = domain.dim();
    let mut rows = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let approx = |x: &[f64]| {
            let mut tx = vec![0.0; d + 1];
            tx[0] = t;
            tx[1..].copy_from_slice(x);
            net.forward(&tx)
        };
        rows.push(row_errors(
            t,
            &approx,
            exact,
            domain,
            n_test,
            mix_seed(seed, k as u64 + 1, u64::MAX),
        )?);
    }
    Ok(ErrorReport { rows, n_test })
}
