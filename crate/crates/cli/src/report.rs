//! `report`: merge finished run directories into a comparison table, with
//! the published full-scale results alongside for context.

use crate::artifacts::read_errors;
use crate::config::{Method, RunConfig};
use crate::run::read_resolved_config;
use gradflow::metrics::ErrorRow;
use gradflow::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Published full-scale relative L2 errors by (method, dimension).
const REFERENCE: &[(Method, usize, f64)] = &[
    (Method::Nitsche, 2, 1.6e-2),
    (Method::Nitsche, 3, 4.7e-3),
    (Method::Nitsche, 5, 2.0e-3),
    (Method::Nitsche, 10, 3.5e-3),
    (Method::Nitsche, 20, 4.2e-3),
    (Method::Dgm, 2, 9.9e-2),
    (Method::Dgm, 3, 9.3e-2),
    (Method::Dgm, 5, 1.2e-1),
    (Method::Dgm, 10, 4.5e-1),
    (Method::Dgm, 20, 4.7e-1),
    (Method::Jko, 2, 8.7e-2),
    (Method::Jko, 3, 1.7e-1),
    (Method::Jko, 5, 8.6e-2),
    (Method::Jko, 10, 8.2e-3),
    (Method::Jko, 20, 4.0e-3),
];

pub fn reference_rel_l2(method: Method, dim: usize) -> Option<f64> {
    REFERENCE
        .iter()
        .find(|(m, d, _)| *m == method && *d == dim)
        .map(|(_, _, v)| *v)
}

#[derive(Debug)]
pub struct ReportEntry {
    pub label: String,
    pub run: RunConfig,
    pub rows: Vec<ErrorRow>,
}

impl ReportEntry {
    pub fn worst_rel_l2(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_l2).fold(0.0, f64::max)
    }

    pub fn final_rel_l2(&self) -> f64 {
        self.rows.last().map(|r| r.rel_l2).unwrap_or(f64::NAN)
    }
}

/// Read one finished run directory (config.toml + errors.csv).
pub fn read_run_dir(dir: &Path) -> Result<ReportEntry> {
    let mut missing = Vec::new();
    if !dir.join("config.toml").exists() {
        missing.push("config.toml");
    }
    if !dir.join("errors.csv").exists() {
        missing.push("errors.csv");
    }
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "{}: missing expected files: {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    let run = read_resolved_config(dir)?;
    let rows = read_errors(&dir.join("errors.csv"))?;
    Ok(ReportEntry {
        label: run.label.clone(),
        run,
        rows,
    })
}

pub const REPORT_HEADER: &str =
    "run,method,problem,d,final_time,rel_l2_worst,rel_l2_final,max_abs_worst,paper_rel_l2";

pub fn to_csv(entries: &[ReportEntry]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for e in entries {
        let final_time = e.rows.last().map(|r| r.time).unwrap_or(f64::NAN);
        let worst_max = e.rows.iter().map(|r| r.max_abs).fold(0.0, f64::max);
        let reference = reference_rel_l2(e.run.method, e.run.dim)
            .map(|v| format!("{v:e}"))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{:?},{},{},{:e},{:e},{worst_max:e},{reference}",
            e.label,
            e.run.method.name(),
            e.run.problem,
            e.run.dim,
            final_time,
            e.worst_rel_l2(),
            e.final_rel_l2(),
        );
    }
    out
}

pub fn to_markdown(entries: &[ReportEntry]) -> String {
    let mut out = String::new();
    out.push_str("| run | method | d | rel L2 (worst) | rel L2 (final) | max error | full-scale ref |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for e in entries {
        let worst_max = e.rows.iter().map(|r| r.max_abs).fold(0.0, f64::max);
        let reference = reference_rel_l2(e.run.method, e.run.dim)
            .map(|v| format!("{v:.1e}"))
            .unwrap_or_else(|| "—".into());
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.2e} | {:.2e} | {:.2e} | {reference} |",
            e.label,
            e.run.method.name(),
            e.run.dim,
            e.worst_rel_l2(),
            e.final_rel_l2(),
            worst_max,
        );
    }
    out
}
