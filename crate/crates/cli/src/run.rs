//! Run execution: initial-condition fits, solves with checkpointing and
//! resume, and error evaluation with plot emission.

use crate::artifacts::{
    checkpoint_path, dgm_checkpoint_path, load_checkpoints, save_checkpoint, write_errors,
    CsvWriter,
};
use crate::config::{ConfigFile, Method, RunConfig};
use crate::plot::{line_plot, Series};
use gradflow::dgm::{solve_dgm, SpaceTimeData};
use gradflow::flow::{fit_initial, solve, Trajectory};
use gradflow::jko::{solve_jko_resume, JkoTrajectory};
use gradflow::metrics::{evaluate_flow, evaluate_jko, evaluate_spacetime, ErrorReport};
use gradflow::network::Network;
use gradflow::{Error, Result};
use std::path::{Path, PathBuf};

pub const FLOW_LOG_HEADER: &str = "step,epoch,loss,gamma,rate";
pub const JKO_LOG_HEADER: &str =
    "step,epoch,loss,transport_cost,entropy,sinkhorn_iterations,marginal_residual,rate";
pub const IC_LOG_HEADER: &str = "epoch,loss,rate";

pub fn run_dir(root: &Path, file: &ConfigFile, run: &RunConfig) -> PathBuf {
    root.join(&file.name).join(&run.label)
}

/// Persist the resolved single-run configuration next to its artifacts so a
/// run directory is self-describing (`report` reads it back).
pub fn write_resolved_config(dir: &Path, file: &ConfigFile, run: &RunConfig) -> Result<()> {
    let resolved = ConfigFile {
        name: file.name.clone(),
        description: file.description.clone(),
        runs: vec![run.clone()],
    };
    let text = toml::to_string_pretty(&resolved)
        .map_err(|e| Error::Config(format!("serializing config: {e}")))?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), text)?;
    Ok(())
}

pub fn read_resolved_config(dir: &Path) -> Result<RunConfig> {
    let path = dir.join("config.toml");
    let file = ConfigFile::load(&path)?;
    file.runs
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config(format!("{}: no [[run]] table", path.display())))
}

/// Fit the initial condition and store it as checkpoint 0. With `reuse`,
/// an existing checkpoint is loaded instead of re-fitting.
pub fn fit_ic(run: &RunConfig, dir: &Path, reuse: bool) -> Result<Network> {
    if run.method == Method::Dgm {
        return Err(Error::Config(
            "method = \"dgm\" has no separate initial-condition stage; use `solve`".into(),
        ));
    }
    let path = checkpoint_path(dir, 0);
    if reuse && path.exists() {
        log::info!("reusing initial condition {}", path.display());
        return Network::checkpoint_load(&path);
    }
    let problem = run.problem();
    let (schedule, optimizer, grad_tol) = run.initial_fit_schedule()?;
    let mut net = Network::init_xavier(run.architecture()?, run.seed);
    let mut csv = CsvWriter::create(&dir.join("ic_log.csv"), IC_LOG_HEADER)?;
    let loss = fit_initial(
        &mut net,
        &*problem.initial,
        &problem.domain,
        &run.sampling(),
        &schedule,
        optimizer,
        run.seed,
        grad_tol,
        &mut |l| {
            let _ = csv.row(format_args!("{},{:e},{:e}", l.epoch, l.loss, l.rate));
        },
    )?;
    csv.flush()?;
    log::info!("initial fit finished with loss {loss:.3e}");
    save_checkpoint(dir, 0, &net)?;
    Ok(net)
}

/// Execute a run end to end: initial fit (if any), time stepping with
/// per-step checkpoints, error evaluation, CSV and plot emission. With
/// `resume`, completed steps are loaded from checkpoints and skipped;
/// seeding is per (seed, step, epoch), so the result is identical to an
/// uninterrupted run.
pub fn solve_run(file: &ConfigFile, run: &RunConfig, dir: &Path, resume: bool) -> Result<ErrorReport> {
    write_resolved_config(dir, file, run)?;
    match run.method {
        Method::Nitsche => solve_nitsche(run, dir, resume),
        Method::Jko => solve_jko_run(run, dir, resume),
        Method::Dgm => solve_dgm_run(run, dir, resume),
    }?;
    eval_run(run, dir)
}

fn solve_nitsche(run: &RunConfig, dir: &Path, resume: bool) -> Result<()> {
    let problem = run.problem();
    let grid = run.time_grid()?;
    let cfg = run.flow_config()?;
    let networks = if resume { load_checkpoints(dir)? } else { Vec::new() };
    let mut traj = if networks.is_empty() {
        Trajectory::new(grid.tau, fit_ic(run, dir, resume)?)
    } else {
        log::info!("resuming after {} completed steps", networks.len() - 1);
        Trajectory { tau: grid.tau, networks }
    };
    let mut csv = CsvWriter::create(&dir.join("train_log.csv"), FLOW_LOG_HEADER)?;
    solve(
        &mut traj,
        &problem.domain,
        &problem.data(),
        &problem.diffusion,
        &grid,
        &run.sampling(),
        &cfg,
        run.seed,
        &mut |l| {
            let _ = csv.row(format_args!(
                "{},{},{:e},{:e},{:e}",
                l.step, l.epoch, l.loss, l.gamma_max, l.rate
            ));
        },
        &mut |step, net| {
            log::info!("step {step}/{} done", grid.n_steps);
            save_checkpoint(dir, step, net)
        },
    )?;
    csv.flush()
}

fn solve_jko_run(run: &RunConfig, dir: &Path, resume: bool) -> Result<()> {
    let problem = run.problem();
    let grid = run.time_grid()?;
    let cfg = run.jko_config()?;
    let n_support = run.jko.as_ref().map(|s| s.n_support).unwrap_or(0);
    let networks = if resume { load_checkpoints(dir)? } else { Vec::new() };
    let mut traj = if networks.is_empty() {
        JkoTrajectory {
            tau: grid.tau,
            networks: vec![fit_ic(run, dir, resume)?],
        }
    } else {
        log::info!("resuming after {} completed steps", networks.len() - 1);
        JkoTrajectory { tau: grid.tau, networks }
    };
    let mut csv = CsvWriter::create(&dir.join("train_log.csv"), JKO_LOG_HEADER)?;
    solve_jko_resume(
        &mut traj,
        &problem.domain,
        grid.n_steps,
        n_support,
        &cfg,
        run.seed,
        &mut |l| {
            let _ = csv.row(format_args!(
                "{},{},{:e},{:e},{:e},{},{:e},{:e}",
                l.step,
                l.epoch,
                l.loss,
                l.transport_cost,
                l.entropy,
                l.sinkhorn_iterations,
                l.marginal_residual,
                l.rate
            ));
        },
        &mut |step, net| {
            log::info!("step {step}/{} done", grid.n_steps);
            save_checkpoint(dir, step, net)
        },
    )?;
    csv.flush()
}

fn solve_dgm_run(run: &RunConfig, dir: &Path, resume: bool) -> Result<()> {
    let path = dgm_checkpoint_path(dir);
    if resume && path.exists() {
        log::info!("reusing trained space-time network {}", path.display());
        return Ok(());
    }
    let problem = run.problem();
    let grid = run.time_grid()?;
    let cfg = run.dgm_config()?;
    let horizon = grid.tau * grid.n_steps as f64;
    let mut net = Network::init_xavier(run.architecture()?, run.seed);
    let initial = &*problem.initial;
    let data = SpaceTimeData {
        forcing: &*problem.forcing,
        dirichlet: &*problem.dirichlet,
        neumann: &*problem.neumann,
        initial,
    };
    let mut csv = CsvWriter::create(&dir.join("train_log.csv"), FLOW_LOG_HEADER)?;
    let loss = solve_dgm(&mut net, &problem.domain, horizon, &data, &cfg, run.seed, &mut |l| {
        let _ = csv.row(format_args!(
            "{},{},{:e},{:e},{:e}",
            l.step, l.epoch, l.loss, l.gamma_max, l.rate
        ));
    })?;
    csv.flush()?;
    log::info!("space-time fit finished with loss {loss:.3e}");
    std::fs::create_dir_all(path.parent().unwrap())?;
    net.checkpoint_save(&path)
}

/// Evaluate the stored solution against the exact one and write errors.csv
/// plus the static plots.
pub fn eval_run(run: &RunConfig, dir: &Path) -> Result<ErrorReport> {
    let problem = run.problem();
    let grid = run.time_grid()?;
    let report = match run.method {
        Method::Nitsche => {
            let networks = load_checkpoints(dir)?;
            expect_trajectory(&networks, grid.n_steps, dir)?;
            let traj = Trajectory { tau: grid.tau, networks };
            evaluate_flow(&traj, &*problem.exact, &problem.domain, run.eval.n_test, run.eval.seed)?
        }
        Method::Jko => {
            let networks = load_checkpoints(dir)?;
            expect_trajectory(&networks, grid.n_steps, dir)?;
            let traj = JkoTrajectory { tau: grid.tau, networks };
            evaluate_jko(&traj, &*problem.exact, &problem.domain, run.eval.n_test, run.eval.seed)?
        }
        Method::Dgm => {
            let path = dgm_checkpoint_path(dir);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "{}: no trained network; run `solve` first",
                    path.display()
                )));
            }
            let net = Network::checkpoint_load(&path)?;
            evaluate_spacetime(
                &net,
                &grid.times(),
                &*problem.exact,
                &problem.domain,
                run.eval.n_test,
                run.eval.seed,
            )?
        }
    };
    write_errors(&dir.join("errors.csv"), &report)?;
    let err_points: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.time, r.rel_l2)).collect();
    line_plot(
        &dir.join("error_vs_time.svg"),
        &format!("{} (d = {}): relative L2 error", run.label, run.dim),
        "t",
        "relative L2 error",
        &[Series { name: &run.label, points: &err_points }],
        true,
    )?;
    plot_loss(run, dir)?;
    Ok(report)
}

/// Loss-vs-epoch plot rebuilt from train_log.csv so it also works for
/// `eval` on a finished directory.
fn plot_loss(run: &RunConfig, dir: &Path) -> Result<()> {
    let path = dir.join("train_log.csv");
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(&path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let loss_col = header
        .split(',')
        .position(|c| c == "loss")
        .ok_or_else(|| Error::Config(format!("{}: no loss column", path.display())))?;
    let points: Vec<(f64, f64)> = lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .filter_map(|(i, l)| {
            let loss: f64 = l.split(',').nth(loss_col)?.parse().ok()?;
            Some((i as f64, loss))
        })
        .collect();
    if points.is_empty() {
        return Ok(());
    }
    // JKO objectives can be negative; plot those on a linear axis.
    let log_y = points.iter().all(|&(_, y)| y > 0.0);
    line_plot(
        &dir.join("loss_vs_epoch.svg"),
        &format!("{}: training loss", run.label),
        "epoch (cumulative over steps)",
        "loss",
        &[Series { name: &run.label, points: &points }],
        log_y,
    )
}

fn expect_trajectory(networks: &[Network], n_steps: usize, dir: &Path) -> Result<()> {
    if networks.len() < n_steps + 1 {
        return Err(Error::Config(format!(
            "{}: found {} checkpoints, expected {} (run `solve`, or `solve --resume` to continue)",
            dir.display(),
            networks.len(),
            n_steps + 1
        )));
    }
    Ok(())
}

/// Write the combined per-dimension table for a finished experiment, in the
/// column format of the published tables (worst over the time grid).
pub fn write_summary_table(
    root: &Path,
    file: &ConfigFile,
    results: &[(String, usize, ErrorReport)],
) -> Result<PathBuf> {
    let path = root.join(&file.name).join("table.csv");
    let mut csv = CsvWriter::create(&path, "d,rel_l2,max_abs,mean_abs")?;
    for (_, dim, report) in results {
        let worst_max = report.rows.iter().map(|r| r.max_abs).fold(0.0, f64::max);
        let worst_mean = report.rows.iter().map(|r| r.mean_abs).fold(0.0, f64::max);
        csv.row(format_args!(
            "{dim},{:e},{worst_max:e},{worst_mean:e}",
            report.worst_rel_l2()
        ))?;
    }
    csv.flush()?;
    Ok(path)
}
