//! Minimising-movement (JKO) steps in the 2-Wasserstein metric: the heat
//! flow is the gradient flow of the entropy ∫ u log u, so each step solves
//!   min_w  ½ d_ε(u^{k−1}, w)² + τ ∫ w log w
//! with the transport term handled by Sinkhorn and its envelope gradient,
//! and the entropy by Monte Carlo on the interior cloud.

use crate::autodiff::{DerivOrder, Tape, Var};
use crate::domain::{sample_clouds, BoxDomain, Cloud};
use crate::error::{Error, Result};
use crate::flow::{mix_seed, LrSchedule, Optimizer, OptimizerKind};
use crate::model::Model;
use crate::network::Network;
use crate::sinkhorn::{cost_matrix, sinkhorn, DiscreteMeasure, SinkhornParams, SinkhornState};

/// Density values are clamped below at this floor before taking logs or
/// normalising, so transient negative network outputs cannot poison a step.
pub const DENSITY_FLOOR: f64 = 1e-8;

/// Clamped point values v_n = max(w(x_n), floor) and their normalisation
/// b_n = v_n / Σv. Returns (b, v, S).
pub fn density_weights<M: Model>(model: &M, support: &Cloud) -> (Vec<f64>, Vec<f64>, f64) {
    let v: Vec<f64> = support
        .iter()
        .map(|x| model.value(x).max(DENSITY_FLOOR))
        .collect();
    let s: f64 = v.iter().sum();
    let b = v.iter().map(|x| x / s).collect();
    (b, v, s)
}

/// MC estimate of the entropy of the mass-normalised density û = w / M
/// (M = ∫w estimated on the same cloud), recorded on the tape:
///   ∫ û log û = E₀/M − log M   with   E₀ = ∫ w log w.
///
/// Normalising inside the functional keeps the objective invariant under
/// rescaling of the raw network output, which is a gauge direction: the
/// transport term only sees the normalised weights, so an unnormalised
/// entropy would otherwise pull the output level towards e^{−1}.
pub fn entropy_term<M: Model>(
    model: &M,
    support: &Cloud,
    volume: f64,
    tape: &mut Tape,
) -> Result<Var> {
    let mut acc_wl: Option<Var> = None;
    let mut acc_w: Option<Var> = None;
    for x in support.iter() {
        let jet = model.record_jet(tape, x, DerivOrder::Value)?;
        let w = tape.max_const(jet.val, DENSITY_FLOOR);
        let l = tape.ln(w);
        let t = tape.mul(w, l);
        acc_wl = Some(match acc_wl {
            None => t,
            Some(a) => tape.add(a, t),
        });
        acc_w = Some(match acc_w {
            None => w,
            Some(a) => tape.add(a, w),
        });
    }
    let sum_wl = acc_wl.ok_or_else(|| Error::EmptyRegion("jko support".into()))?;
    let sum_w = acc_w.ok_or_else(|| Error::EmptyRegion("jko support".into()))?;
    let scale = volume / support.len() as f64;
    let e0 = tape.mul_const(sum_wl, scale);
    let mass = tape.mul_const(sum_w, scale);
    let inv_mass = tape.recip(mass);
    let first = tape.mul(e0, inv_mass);
    let log_mass = tape.ln(mass);
    Ok(tape.sub(first, log_mass))
}

#[derive(Clone)]
pub struct JkoConfig {
    pub schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    pub sinkhorn: SinkhornParams,
    pub grad_tol: f64,
    pub divergence_factor: f64,
}

impl JkoConfig {
    pub fn new(schedule: LrSchedule, epsilon: f64) -> JkoConfig {
        JkoConfig {
            schedule,
            optimizer: OptimizerKind::Sgd,
            sinkhorn: SinkhornParams::new(epsilon),
            grad_tol: 0.0,
            divergence_factor: 1e6,
        }
    }
}

/// One evaluation of the JKO objective.
#[derive(Debug, Clone)]
pub struct JkoObjective {
    /// ½·dual transport value + τ·entropy.
    pub value: f64,
    /// Parameter gradient of the objective.
    pub grad: Vec<f64>,
    /// Entropy of the normalised density (MC estimate).
    pub entropy: f64,
    /// Converged Sinkhorn state for warm-starting and diagnostics.
    pub state: SinkhornState,
}

/// One evaluation of the JKO objective: value and parameter gradient.
///
/// The transport half is ½·(f·a + g·b(θ)); its θ-gradient follows from the
/// envelope identity ∂/∂b_j = g_j, pushed through b = v/Σv, so the tape only
/// carries the linearised term Σ_n c_n v_n with frozen coefficients
/// c_n = ½(g_n − Σ_j g_j b_j)/S.
#[allow(clippy::too_many_arguments)]
pub fn jko_step_objective<M: Model>(
    model: &M,
    cost: &[f64],
    prev_weights: &[f64],
    support: &Cloud,
    volume: f64,
    tau: f64,
    cfg: &JkoConfig,
    warm: Option<(&[f64], &[f64])>,
) -> Result<JkoObjective> {
    let (b, v, s) = density_weights(model, support);
    let state = sinkhorn(cost, prev_weights, &b, &cfg.sinkhorn, warm)?;
    if !state.converged {
        return Err(Error::SinkhornNotConverged {
            iterations: state.iterations,
            residual: state.marginal_residual,
        });
    }
    let g_bar: f64 = state
        .potential_g
        .iter()
        .zip(&b)
        .map(|(g, b)| g * b)
        .sum();

    let mut tape = Tape::with_params(model.params());
    let mut acc: Option<Var> = None;
    for (n, x) in support.iter().enumerate() {
        let jet = model.record_jet(&mut tape, x, DerivOrder::Value)?;
        let w = tape.max_const(jet.val, DENSITY_FLOOR);
        let c_n = 0.5 * (state.potential_g[n] - g_bar) / s;
        let t = tape.mul_const(w, c_n);
        acc = Some(match acc {
            None => t,
            Some(a) => tape.add(a, t),
        });
    }
    let transport = acc.ok_or_else(|| Error::EmptyRegion("jko support".into()))?;
    let entropy = entropy_term(model, support, volume, &mut tape)?;
    let scaled = tape.mul_const(entropy, tau);
    let total = tape.add(transport, scaled);
    let grad = tape.gradient(total)?;

    // objective value reported with the true transport half, not the
    // linearised surrogate recorded on the tape
    let scale = volume / support.len() as f64;
    let e0: f64 = v.iter().map(|&w| w * w.ln()).sum::<f64>() * scale;
    let mass: f64 = v.iter().sum::<f64>() * scale;
    let entropy_value = e0 / mass - mass.ln();
    let value = 0.5 * state.dual_value + tau * entropy_value;
    Ok(JkoObjective {
        value,
        grad,
        entropy: entropy_value,
        state,
    })
}

/// One line of the JKO training log, with transport diagnostics alongside
/// the loss.
#[derive(Debug, Clone, Copy)]
pub struct JkoEpochLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub transport_cost: f64,
    pub entropy: f64,
    pub sinkhorn_iterations: usize,
    pub marginal_residual: f64,
    pub rate: f64,
}

/// Densities along the flow; `networks[k]` approximates u(t_k).
#[derive(Clone)]
pub struct JkoTrajectory {
    pub tau: f64,
    pub networks: Vec<Network>,
}

/// March `n_steps` JKO steps of size τ from the (already fitted) initial
/// density. Support clouds are drawn per step from (seed, k); the previous
/// measure lives on the previous step's cloud.
#[allow(clippy::too_many_arguments)]
pub fn solve_jko(
    initial: Network,
    domain: &BoxDomain,
    tau: f64,
    n_steps: usize,
    n_support: usize,
    cfg: &JkoConfig,
    seed: u64,
    log: &mut dyn FnMut(&JkoEpochLog),
    after_step: &mut dyn FnMut(usize, &Network) -> Result<()>,
) -> Result<JkoTrajectory> {
    let mut traj = JkoTrajectory {
        tau,
        networks: vec![initial],
    };
    solve_jko_resume(&mut traj, domain, n_steps, n_support, cfg, seed, log, after_step)?;
    Ok(traj)
}

/// Continuation form of [`solve_jko`]; completed steps are skipped and the
/// per-(seed, step) cloud seeding makes the result identical to an
/// uninterrupted run.
#[allow(clippy::too_many_arguments)]
pub fn solve_jko_resume(
    traj: &mut JkoTrajectory,
    domain: &BoxDomain,
    n_steps: usize,
    n_support: usize,
    cfg: &JkoConfig,
    seed: u64,
    log: &mut dyn FnMut(&JkoEpochLog),
    after_step: &mut dyn FnMut(usize, &Network) -> Result<()>,
) -> Result<()> {
    let volume = domain.volume();
    for k in traj.networks.len()..=n_steps {
        let prev_net = traj.networks[k - 1].clone();
        // both measures share one support cloud per step: the transport term
        // then compares densities, not cloud geometries
        let support =
            sample_clouds(domain, n_support, 1, mix_seed(seed, k as u64, 0))?.interior;
        let (prev_b, _, _) = density_weights(&prev_net, &support);
        let prev_measure =
            DiscreteMeasure::new(domain.dim(), support.data().to_vec(), prev_b)?;
        let cost = cost_matrix(&prev_measure, &prev_measure)?;

        let mut net = prev_net;
        let mut opt = Optimizer::new(cfg.optimizer, net.params().len());
        let mut warm: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut first_loss = f64::NAN;
        for epoch in 0..cfg.schedule.total_epochs() {
            let obj = jko_step_objective(
                &net,
                &cost,
                prev_measure.weights(),
                &support,
                volume,
                traj.tau,
                cfg,
                warm.as_ref().map(|(f, g)| (f.as_slice(), g.as_slice())),
            )?;
            if epoch == 0 {
                first_loss = obj.value;
            } else if obj.value.abs() > cfg.divergence_factor * first_loss.abs().max(1.0) {
                return Err(Error::Diverged {
                    step: k,
                    epoch,
                    loss: obj.value,
                    limit: cfg.divergence_factor * first_loss.abs().max(1.0),
                });
            }
            let rate = cfg.schedule.rate(epoch);
            let delta = opt.step(net.params_mut(), &obj.grad, rate);
            log(&JkoEpochLog {
                step: k,
                epoch,
                loss: obj.value,
                transport_cost: obj.state.transport_cost,
                entropy: obj.entropy,
                sinkhorn_iterations: obj.state.iterations,
                marginal_residual: obj.state.marginal_residual,
                rate,
            });
            warm = Some((obj.state.potential_f, obj.state.potential_g));
            if delta < cfg.grad_tol {
                break;
            }
        }
        after_step(k, &net)?;
        traj.networks.push(net);
    }
    Ok(())
}
