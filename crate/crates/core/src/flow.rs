//! Discrete gradient-flow time stepping: at each node t_k the solver
//! minimises
//!   c·(|Ω|/N_I) Σ (w − u^{k−1})²(x_n)  +  τ_k · Ñ(w)
//! over the network parameters, warm-started from u^{k−1}.

use crate::autodiff::{DerivOrder, Tape};
use crate::domain::{sample_clouds, BoxDomain, PointClouds};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::network::Network;
use crate::nitsche::{
    nitsche_functional, penalty_from_model, DiffusionSpec, PenaltyConfig, SpatialData,
};

/// Uniform partition 0 = t_0 < … < t_{N_t} with t_k = k·τ.
#[derive(Debug, Clone, Copy)]
pub struct TimeGrid {
    pub tau: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(tau: f64, n_steps: usize) -> Result<TimeGrid> {
        if !(tau > 0.0) || n_steps == 0 {
            return Err(Error::Config(format!(
                "time grid needs τ > 0 and at least one step (τ = {tau}, steps = {n_steps})"
            )));
        }
        Ok(TimeGrid { tau, n_steps })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.tau * k as f64
    }

    /// t_1, …, t_{N_t}
    pub fn times(&self) -> Vec<f64> {
        (1..=self.n_steps).map(|k| self.time(k)).collect()
    }
}

/// Piecewise-constant learning rate over epochs.
#[derive(Debug, Clone)]
pub struct LrSchedule {
    /// (epoch count, rate) stages, run in order.
    stages: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(epochs: usize, rate: f64) -> LrSchedule {
        LrSchedule {
            stages: vec![(epochs, rate)],
        }
    }

    pub fn piecewise(stages: Vec<(usize, f64)>) -> Result<LrSchedule> {
        if stages.is_empty() || stages.iter().any(|&(n, lr)| n == 0 || !(lr > 0.0)) {
            return Err(Error::Config(
                "learning-rate schedule needs non-empty stages with positive rates".into(),
            ));
        }
        Ok(LrSchedule { stages })
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|&(n, _)| n).sum()
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        let mut acc = 0;
        for &(n, lr) in &self.stages {
            acc += n;
            if epoch < acc {
                return lr;
            }
        }
        self.stages.last().unwrap().1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> OptimizerKind {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order update with internal state; `step` returns ‖Δθ‖.
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Optimizer {
        let state = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam { .. } => n_params,
        };
        Optimizer {
            kind,
            m: vec![0.0; state],
            v: vec![0.0; state],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], rate: f64) -> f64 {
        debug_assert_eq!(theta.len(), grad.len());
        let mut delta2 = 0.0;
        match self.kind {
            OptimizerKind::Sgd => {
                for (t, g) in theta.iter_mut().zip(grad) {
                    let d = rate * g;
                    *t -= d;
                    delta2 += d * d;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..theta.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let d = rate * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + eps);
                    theta[i] -= d;
                    delta2 += d * d;
                }
            }
        }
        delta2.sqrt()
    }
}

/// Problem data as functions of (t, x).
pub struct TimeDependentData<'a> {
    pub forcing: &'a dyn Fn(f64, &[f64]) -> f64,
    pub dirichlet: &'a dyn Fn(f64, &[f64]) -> f64,
    pub neumann: &'a dyn Fn(f64, &[f64]) -> f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SamplingConfig {
    pub n_interior: usize,
    pub per_face: usize,
    /// Draw fresh clouds every this many epochs; 0 keeps one cloud per step.
    pub resample_every: usize,
}

#[derive(Clone)]
pub struct FlowConfig {
    pub schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    pub penalty: PenaltyConfig,
    /// Overrides the adaptive penalty with a fixed constant when set.
    pub fixed_penalty: Option<f64>,
    /// Recompute the adaptive penalty every this many epochs (≥ 1).
    pub penalty_refresh: usize,
    /// Multiplier on the L² distance term; 1 matches the scheme as stated,
    /// 0.5 gives the symmetric-in-τ variant.
    pub l2_factor: f64,
    /// Stop the epoch loop once ‖Δθ‖ falls below this.
    pub grad_tol: f64,
    /// Abort if the loss exceeds this multiple of its first-epoch value.
    pub divergence_factor: f64,
}

impl FlowConfig {
    pub fn new(schedule: LrSchedule) -> FlowConfig {
        FlowConfig {
            schedule,
            optimizer: OptimizerKind::Sgd,
            penalty: PenaltyConfig::pointwise(),
            fixed_penalty: None,
            penalty_refresh: 1,
            l2_factor: 1.0,
            grad_tol: 0.0,
            divergence_factor: 1e6,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy)]
pub struct EpochLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub gamma_max: f64,
    pub rate: f64,
}

/// Deterministic sub-stream seed for (run seed, time step, epoch).
pub fn mix_seed(seed: u64, step: u64, epoch: u64) -> u64 {
    let mut z = seed
        .wrapping_add(step.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(epoch.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn penalty_values(
    net: &Network,
    clouds: &PointClouds,
    cfg: &FlowConfig,
    diffusion: &DiffusionSpec,
) -> Vec<f64> {
    match cfg.fixed_penalty {
        Some(g) => vec![g; clouds.dirichlet.len()],
        None => penalty_from_model(net, clouds, &cfg.penalty, diffusion),
    }
}

/// L² fit of the network to a target function over interior and boundary
/// points; used for the initial condition u_0.
pub fn fit_initial(
    net: &mut Network,
    target: &dyn Fn(&[f64]) -> f64,
    domain: &BoxDomain,
    sampling: &SamplingConfig,
    schedule: &LrSchedule,
    optimizer: OptimizerKind,
    seed: u64,
    grad_tol: f64,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<f64> {
    let mut opt = Optimizer::new(optimizer, net.params().len());
    let mut clouds = sample_clouds(domain, sampling.n_interior, sampling.per_face, mix_seed(seed, 0, 0))?;
    let mut loss = f64::NAN;
    for epoch in 0..schedule.total_epochs() {
        if sampling.resample_every > 0 && epoch > 0 && epoch % sampling.resample_every == 0 {
            clouds = sample_clouds(
                domain,
                sampling.n_interior,
                sampling.per_face,
                mix_seed(seed, 0, epoch as u64),
            )?;
        }
        let mut tape = Tape::with_params(net.params());
        let mut regions: Vec<crate::autodiff::Var> = Vec::new();
        for (cloud, weight) in [
            (&clouds.interior, clouds.interior_weight()),
            (&clouds.dirichlet, clouds.dirichlet_weight()),
            (&clouds.neumann, clouds.neumann_weight()),
        ] {
            if cloud.is_empty() {
                continue;
            }
            let mut acc = None;
            for x in cloud.iter() {
                let jet = net.record_jet(&mut tape, x, DerivOrder::Value)?;
                let d = tape.add_const(jet.val, -target(x));
                let sq = tape.sqr(d);
                acc = Some(match acc {
                    None => sq,
                    Some(a) => tape.add(a, sq),
                });
            }
            regions.push(tape.mul_const(acc.unwrap(), weight));
        }
        let total = tape.sum(&regions);
        loss = tape.value(total);
        let grad = tape.gradient(total)?;
        let rate = schedule.rate(epoch);
        let delta = opt.step(net.params_mut(), &grad, rate);
        log(&EpochLog {
            step: 0,
            epoch,
            loss,
            gamma_max: 0.0,
            rate,
        });
        if delta < grad_tol {
            break;
        }
    }
    Ok(loss)
}

/// The step objective on the tape: c·MC[(w − u^{k−1})²] + τ·Ñ(w).
pub fn step_loss<M: Model>(
    model: &M,
    prev_values: &[f64],
    penalty: &[f64],
    clouds: &PointClouds,
    data: &SpatialData,
    diffusion: &DiffusionSpec,
    tau: f64,
    l2_factor: f64,
    tape: &mut Tape,
) -> Result<crate::autodiff::Var> {
    debug_assert_eq!(prev_values.len(), clouds.interior.len());
    let energy = nitsche_functional(model, penalty, clouds, data, diffusion, tape)?;
    let mut acc = None;
    for (i, x) in clouds.interior.iter().enumerate() {
        let jet = model.record_jet(tape, x, DerivOrder::Value)?;
        let d = tape.add_const(jet.val, -prev_values[i]);
        let sq = tape.sqr(d);
        acc = Some(match acc {
            None => sq,
            Some(a) => tape.add(a, sq),
        });
    }
    let l2 = tape.mul_const(acc.unwrap(), l2_factor * clouds.interior_weight());
    let scaled = tape.mul_const(energy, tau);
    Ok(tape.add(l2, scaled))
}

/// Minimise the step objective in place, warm-started from the current
/// parameters. `prev` supplies u^{k−1}. Returns the last loss value.
#[allow(clippy::too_many_arguments)]
pub fn advance_step(
    net: &mut Network,
    prev: &Network,
    domain: &BoxDomain,
    data: &SpatialData,
    diffusion: &DiffusionSpec,
    tau: f64,
    step_index: usize,
    sampling: &SamplingConfig,
    cfg: &FlowConfig,
    seed: u64,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<f64> {
    let mut opt = Optimizer::new(cfg.optimizer, net.params().len());
    let k = step_index as u64;
    let mut clouds = sample_clouds(
        domain,
        sampling.n_interior,
        sampling.per_face,
        mix_seed(seed, k, 0),
    )?;
    let mut prev_values: Vec<f64> = clouds.interior.iter().map(|x| prev.forward(x)).collect();
    let mut pen = penalty_values(net, &clouds, cfg, diffusion);
    let mut first_loss = f64::NAN;
    let mut loss = f64::NAN;
    let refresh = cfg.penalty_refresh.max(1);
    for epoch in 0..cfg.schedule.total_epochs() {
        if sampling.resample_every > 0 && epoch > 0 && epoch % sampling.resample_every == 0 {
            clouds = sample_clouds(
                domain,
                sampling.n_interior,
                sampling.per_face,
                mix_seed(seed, k, epoch as u64),
            )?;
            prev_values = clouds.interior.iter().map(|x| prev.forward(x)).collect();
            pen = penalty_values(net, &clouds, cfg, diffusion);
        } else if epoch > 0 && epoch % refresh == 0 && cfg.fixed_penalty.is_none() {
            pen = penalty_values(net, &clouds, cfg, diffusion);
        }
        let mut tape = Tape::with_params(net.params());
        let total = step_loss(
            net,
            &prev_values,
            &pen,
            &clouds,
            data,
            diffusion,
            tau,
            cfg.l2_factor,
            &mut tape,
        )?;
        loss = tape.value(total);
        if epoch == 0 {
            first_loss = loss;
        } else if loss.abs() > cfg.divergence_factor * first_loss.abs().max(1.0) {
            return Err(Error::Diverged {
                step: step_index,
                epoch,
                loss,
                limit: cfg.divergence_factor * first_loss.abs().max(1.0),
            });
        }
        let grad = tape.gradient(total)?;
        let rate = cfg.schedule.rate(epoch);
        let delta = opt.step(net.params_mut(), &grad, rate);
        log(&EpochLog {
            step: step_index,
            epoch,
            loss,
            gamma_max: pen.iter().cloned().fold(0.0, f64::max),
            rate,
        });
        if delta < cfg.grad_tol {
            break;
        }
    }
    Ok(loss)
}

/// The discrete trajectory u^0, …, u^{N_t}; `networks[k]` approximates u(t_k).
#[derive(Clone)]
pub struct Trajectory {
    pub tau: f64,
    pub networks: Vec<Network>,
}

impl Trajectory {
    pub fn new(tau: f64, initial: Network) -> Trajectory {
        Trajectory {
            tau,
            networks: vec![initial],
        }
    }

    /// Steps completed so far (excludes the initial state).
    pub fn steps_done(&self) -> usize {
        self.networks.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        self.tau * k as f64
    }

    pub fn value(&self, k: usize, x: &[f64]) -> f64 {
        self.networks[k].forward(x)
    }
}

/// March the trajectory forward until `grid.n_steps` steps are done. The
/// trajectory may already contain completed steps (resume), in which case
/// only the remainder runs; seeding is per (seed, step, epoch) so the result
/// is identical to an uninterrupted run.
#[allow(clippy::too_many_arguments)]
pub fn solve(
    traj: &mut Trajectory,
    domain: &BoxDomain,
    data: &TimeDependentData,
    diffusion: &DiffusionSpec,
    grid: &TimeGrid,
    sampling: &SamplingConfig,
    cfg: &FlowConfig,
    seed: u64,
    log: &mut dyn FnMut(&EpochLog),
    after_step: &mut dyn FnMut(usize, &Network) -> Result<()>,
) -> Result<()> {
    if (traj.tau - grid.tau).abs() > 1e-15 {
        return Err(Error::Config(format!(
            "trajectory τ = {} does not match grid τ = {}",
            traj.tau, grid.tau
        )));
    }
    for k in traj.steps_done() + 1..=grid.n_steps {
        let t_k = grid.time(k);
        let forcing = |x: &[f64]| (data.forcing)(t_k, x);
        let dirichlet = |x: &[f64]| (data.dirichlet)(t_k, x);
        let neumann = |x: &[f64]| (data.neumann)(t_k, x);
        let slice = SpatialData {
            forcing: &forcing,
            dirichlet: &dirichlet,
            neumann: &neumann,
        };
        let prev = traj.networks[k - 1].clone();
        let mut net = prev.clone();
        advance_step(
            &mut net, &prev, domain, &slice, diffusion, grid.tau, k, sampling, cfg, seed, log,
        )?;
        after_step(k, &net)?;
        traj.networks.push(net);
    }
    Ok(())
}
