//! Space-time least-squares baseline: one network w(t, x) (time is the
//! first input coordinate) trained on the strong residual
//!   ‖∂_t w − Δw − F‖² over (0,T]×Ω
//! plus boundary and initial mismatches, all Monte Carlo with equal unit
//! weights. The diffusion here is the Laplacian; the tracked jets carry
//! diagonal second derivatives only, which is exactly what Δ needs.

use crate::autodiff::{DerivOrder, Tape, Var};
use crate::domain::{BoxDomain, Cloud, Face, FaceLabel};
use crate::error::{Error, Result};
use crate::flow::{mix_seed, EpochLog, LrSchedule, Optimizer, OptimizerKind};
use crate::model::Model;
use crate::network::Network;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Samples in (0,T]×Ω, (0,T]×∂Ω and {0}×Ω. Space-time points store t first.
#[derive(Debug, Clone)]
pub struct SpaceTimeCloud {
    pub interior: Cloud,
    pub boundary: Cloud,
    pub boundary_faces: Vec<Face>,
    pub initial: Cloud,
    pub horizon: f64,
    pub volume: f64,
    pub boundary_area: f64,
}

impl SpaceTimeCloud {
    pub fn interior_weight(&self) -> f64 {
        self.horizon * self.volume / self.interior.len() as f64
    }

    pub fn boundary_weight(&self) -> f64 {
        self.horizon * self.boundary_area / self.boundary.len() as f64
    }

    pub fn initial_weight(&self) -> f64 {
        self.volume / self.initial.len() as f64
    }
}

/// Uniform draws over the three regions; t ∈ (0, T] via inversion of the
/// half-open unit interval.
pub fn sample_spacetime(
    domain: &BoxDomain,
    horizon: f64,
    n_interior: usize,
    per_face: usize,
    n_initial: usize,
    seed: u64,
) -> Result<SpaceTimeCloud> {
    if n_interior == 0 || per_face == 0 || n_initial == 0 {
        return Err(Error::Config(
            "space-time sampling needs positive counts in every region".into(),
        ));
    }
    if !(horizon > 0.0) {
        return Err(Error::Config(format!("horizon must be positive (got {horizon})")));
    }
    let d = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_t = |rng: &mut ChaCha8Rng| horizon * (1.0 - rng.gen::<f64>());

    let mut interior = Cloud::new(d + 1);
    let mut p = vec![0.0; d + 1];
    for _ in 0..n_interior {
        p[0] = draw_t(&mut rng);
        for (i, v) in domain.sample_point(&mut rng).into_iter().enumerate() {
            p[i + 1] = v;
        }
        interior.push(&p);
    }

    let mut boundary = Cloud::new(d + 1);
    let mut boundary_faces = Vec::new();
    for face in domain.all_faces() {
        for _ in 0..per_face {
            p[0] = draw_t(&mut rng);
            for (i, v) in domain.sample_face_point(face, &mut rng).into_iter().enumerate() {
                p[i + 1] = v;
            }
            boundary.push(&p);
            boundary_faces.push(face);
        }
    }

    let mut initial = Cloud::new(d);
    for _ in 0..n_initial {
        initial.push(&domain.sample_point(&mut rng));
    }

    Ok(SpaceTimeCloud {
        interior,
        boundary,
        boundary_faces,
        initial,
        horizon,
        volume: domain.volume(),
        boundary_area: domain.total_boundary_area(),
    })
}

/// Data for the space-time fit.
pub struct SpaceTimeData<'a> {
    pub forcing: &'a dyn Fn(f64, &[f64]) -> f64,
    pub dirichlet: &'a dyn Fn(f64, &[f64]) -> f64,
    pub neumann: &'a dyn Fn(f64, &[f64]) -> f64,
    pub initial: &'a dyn Fn(&[f64]) -> f64,
}

/// The least-squares objective on the tape.
pub fn dgm_loss<M: Model>(
    model: &M,
    cloud: &SpaceTimeCloud,
    data: &SpaceTimeData,
    domain: &BoxDomain,
    tape: &mut Tape,
) -> Result<Var> {
    let d = domain.dim();
    debug_assert_eq!(model.input_dim(), d + 1);

    let mut parts: Vec<Var> = Vec::new();

    let mut res_acc: Option<Var> = None;
    for (i, tx) in cloud.interior.iter().enumerate() {
        let jet = model.record_jet(tape, tx, DerivOrder::Laplacian)?;
        let lap = jet
            .laplacian(tape, 1..d + 1)
            .expect("laplacian tracked at this order");
        let dt = jet.d1[0];
        let drift = tape.sub(dt, lap);
        let r = tape.add_const(drift, -(data.forcing)(tx[0], &tx[1..]));
        let r2 = tape.sqr(r);
        if !tape.value(r2).is_finite() {
            return Err(Error::NonFiniteTerm {
                context: "dgm residual",
                index: i,
            });
        }
        res_acc = Some(match res_acc {
            None => r2,
            Some(a) => tape.add(a, r2),
        });
    }
    parts.push(tape.mul_const(res_acc.unwrap(), cloud.interior_weight()));

    if !cloud.boundary.is_empty() {
        let mut bd_acc: Option<Var> = None;
        for (i, tx) in cloud.boundary.iter().enumerate() {
            let face = cloud.boundary_faces[i];
            let term = match domain.label(face) {
                FaceLabel::Dirichlet => {
                    let jet = model.record_jet(tape, tx, DerivOrder::Value)?;
                    let m = tape.add_const(jet.val, -(data.dirichlet)(tx[0], &tx[1..]));
                    tape.sqr(m)
                }
                FaceLabel::Neumann => {
                    let jet = model.record_jet(tape, tx, DerivOrder::Gradient)?;
                    // outward normal in space; t-component carries no flux
                    let flux = tape.mul_const(jet.d1[1 + face.axis], face.sign());
                    let m = tape.add_const(flux, -(data.neumann)(tx[0], &tx[1..]));
                    tape.sqr(m)
                }
            };
            if !tape.value(term).is_finite() {
                return Err(Error::NonFiniteTerm {
                    context: "dgm boundary",
                    index: i,
                });
            }
            bd_acc = Some(match bd_acc {
                None => term,
                Some(a) => tape.add(a, term),
            });
        }
        parts.push(tape.mul_const(bd_acc.unwrap(), cloud.boundary_weight()));
    }

    let mut ic_acc: Option<Var> = None;
    let mut tx0 = vec![0.0; d + 1];
    for x in cloud.initial.iter() {
        tx0[1..].copy_from_slice(x);
        let jet = model.record_jet(tape, &tx0, DerivOrder::Value)?;
        let m = tape.add_const(jet.val, -(data.initial)(x));
        let m2 = tape.sqr(m);
        ic_acc = Some(match ic_acc {
            None => m2,
            Some(a) => tape.add(a, m2),
        });
    }
    parts.push(tape.mul_const(ic_acc.unwrap(), cloud.initial_weight()));

    Ok(tape.sum(&parts))
}

#[derive(Clone)]
pub struct DgmConfig {
    pub schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    pub n_interior: usize,
    pub per_face: usize,
    pub n_initial: usize,
    pub resample_every: usize,
    pub grad_tol: f64,
    pub divergence_factor: f64,
}

impl DgmConfig {
    pub fn new(schedule: LrSchedule, n_interior: usize, per_face: usize, n_initial: usize) -> DgmConfig {
        DgmConfig {
            schedule,
            optimizer: OptimizerKind::Sgd,
            n_interior,
            per_face,
            n_initial,
            resample_every: 0,
            grad_tol: 0.0,
            divergence_factor: 1e6,
        }
    }
}

/// Train the space-time network in place; returns the last loss value.
pub fn solve_dgm(
    net: &mut Network,
    domain: &BoxDomain,
    horizon: f64,
    data: &SpaceTimeData,
    cfg: &DgmConfig,
    seed: u64,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<f64> {
    let mut opt = Optimizer::new(cfg.optimizer, net.params().len());
    let mut cloud = sample_spacetime(
        domain,
        horizon,
        cfg.n_interior,
        cfg.per_face,
        cfg.n_initial,
        mix_seed(seed, 0, 0),
    )?;
    let mut first_loss = f64::NAN;
    let mut loss = f64::NAN;
    for epoch in 0..cfg.schedule.total_epochs() {
        if cfg.resample_every > 0 && epoch > 0 && epoch % cfg.resample_every == 0 {
            cloud = sample_spacetime(
                domain,
                horizon,
                cfg.n_interior,
                cfg.per_face,
                cfg.n_initial,
                mix_seed(seed, 0, epoch as u64),
            )?;
        }
        let mut tape = Tape::with_params(net.params());
        let total = dgm_loss(net, &cloud, data, domain, &mut tape)?;
        loss = tape.value(total);
        if epoch == 0 {
            first_loss = loss;
        } else if loss > cfg.divergence_factor * first_loss.max(1.0) {
            return Err(Error::Diverged {
                step: 0,
                epoch,
                loss,
                limit: cfg.divergence_factor * first_loss.max(1.0),
            });
        }
        let grad = tape.gradient(total)?;
        let rate = cfg.schedule.rate(epoch);
        let delta = opt.step(net.params_mut(), &grad, rate);
        log(&EpochLog {
            step: 0,
            epoch,
            loss,
            gamma_max: 0.0,
            rate,
        });
        if delta < cfg.grad_tol {
            break;
        }
    }
    Ok(loss)
}
