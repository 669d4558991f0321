//! Run-directory layout and CSV serialization.
//!
//! ```text
//! <output root>/<experiment name>/<run label>/
//!   config.toml            resolved single-run configuration
//!   checkpoints/u_0000.ckpt ...   (dgm: checkpoints/net.ckpt)
//!   ic_log.csv             epoch,loss,rate
//!   train_log.csv          step,epoch,loss,gamma,rate
//!                          (jko: step,epoch,loss,transport_cost,entropy,
//!                                sinkhorn_iterations,marginal_residual,rate)
//!   errors.csv             time,rel_l2,max_abs,mean_abs
//!   error_vs_time.svg
//!   loss_vs_epoch.svg
//! ```
//!
//! The default output root is `./runs`, overridable with the
//! `GRADFLOW_OUT` environment variable or the `--out` flag.

use gradflow::metrics::{ErrorReport, ErrorRow};
use gradflow::network::Network;
use gradflow::{Error, Result};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const OUT_ENV_VAR: &str = "GRADFLOW_OUT";

pub fn output_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn checkpoint_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoints")
}

pub fn checkpoint_path(run_dir: &Path, step: usize) -> PathBuf {
    checkpoint_dir(run_dir).join(format!("u_{step:04}.ckpt"))
}

pub fn dgm_checkpoint_path(run_dir: &Path) -> PathBuf {
    checkpoint_dir(run_dir).join("net.ckpt")
}

pub fn save_checkpoint(run_dir: &Path, step: usize, net: &Network) -> Result<()> {
    std::fs::create_dir_all(checkpoint_dir(run_dir))?;
    net.checkpoint_save(checkpoint_path(run_dir, step))
}

/// Load the consecutive checkpoints u_0000, u_0001, … present in the run
/// directory; an empty vector means no initial fit has been stored yet.
pub fn load_checkpoints(run_dir: &Path) -> Result<Vec<Network>> {
    let mut networks = Vec::new();
    loop {
        let path = checkpoint_path(run_dir, networks.len());
        if !path.exists() {
            break;
        }
        networks.push(Network::checkpoint_load(&path)?);
    }
    Ok(networks)
}

/// Buffered CSV writer that emits the header once on creation.
pub struct CsvWriter {
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &str) -> Result<CsvWriter> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{header}")?;
        Ok(CsvWriter { out })
    }

    pub fn row(&mut self, fields: std::fmt::Arguments) -> Result<()> {
        writeln!(self.out, "{fields}")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub const ERRORS_HEADER: &str = "time,rel_l2,max_abs,mean_abs";

pub fn write_errors(path: &Path, report: &ErrorReport) -> Result<()> {
    let mut csv = CsvWriter::create(path, ERRORS_HEADER)?;
    for row in &report.rows {
        csv.row(format_args!(
            "{},{:e},{:e},{:e}",
            row.time, row.rel_l2, row.max_abs, row.mean_abs
        ))?;
    }
    csv.flush()
}

pub fn read_errors(path: &Path) -> Result<Vec<ErrorRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == ERRORS_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "{}: expected header `{ERRORS_HEADER}`, found {other:?}",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Config(format!(
                "{}: line {} has {} fields, expected 4",
                path.display(),
                i + 2,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Config(format!("{}: line {}: {e}", path.display(), i + 2)))
        };
        rows.push(ErrorRow {
            time: parse(fields[0])?,
            rel_l2: parse(fields[1])?,
            max_abs: parse(fields[2])?,
            mean_abs: parse(fields[3])?,
        });
    }
    Ok(rows)
}
