//! Run configuration: a TOML file with one `[[run]]` table per experiment.
//!
//! The same schema backs user-supplied files and the embedded presets; see
//! `gradflow preset show <name>` for complete examples. Validation reports
//! the offending key path so malformed files fail with actionable messages.

use gradflow::domain::BoxDomain;
use gradflow::flow::{FlowConfig, LrSchedule, OptimizerKind, SamplingConfig, TimeGrid};
use gradflow::jko::JkoConfig;
use gradflow::network::{Activation, Architecture};
use gradflow::nitsche::PenaltyConfig;
use gradflow::problems::{dirichlet_sine, neumann_product, Problem};
use gradflow::sinkhorn::SinkhornParams;
use gradflow::{dgm::DgmConfig, Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Experiment name; runs land under `<output root>/<name>/<label>/`.
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(rename = "run")]
    pub runs: Vec<RunConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Nitsche,
    Jko,
    Dgm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Nitsche => "nitsche",
            Method::Jko => "jko",
            Method::Dgm => "dgm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// u = sin(t)·sin(Σxᵢ), Dirichlet boundary.
    DirichletSine,
    /// u = ½(e^{−dπ²t}·Πcos(πxᵢ) + 2), Neumann boundary, unit mass.
    NeumannProduct,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Sub-directory name for this run's artifacts.
    pub label: String,
    pub method: Method,
    pub problem: ProblemKind,
    pub dim: usize,
    pub seed: u64,
    pub architecture: ArchSection,
    pub time: TimeSection,
    pub sampling: SamplingSection,
    /// Initial-condition fit schedule (nitsche and jko; ignored for dgm).
    #[serde(default)]
    pub initial_fit: Option<StageSection>,
    /// Per-step training schedule (the whole space-time fit for dgm).
    pub training: StageSection,
    #[serde(default)]
    pub penalty: Option<PenaltySection>,
    #[serde(default)]
    pub jko: Option<JkoSection>,
    #[serde(default)]
    pub dgm: Option<DgmSection>,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub blocks: usize,
    pub width: usize,
    pub activation: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub tau: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub n_interior: usize,
    pub per_face: usize,
    #[serde(default = "default_resample")]
    pub resample_every: usize,
}

fn default_resample() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub epochs: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub stages: Vec<Stage>,
    #[serde(default = "default_optimizer")]
    pub optimizer: String,
    #[serde(default)]
    pub grad_tol: f64,
    #[serde(default = "default_divergence")]
    pub divergence_factor: f64,
}

fn default_optimizer() -> String {
    "sgd".into()
}

fn default_divergence() -> f64 {
    1e6
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySection {
    /// "pointwise" or "max".
    #[serde(default = "default_penalty_mode")]
    pub mode: String,
    #[serde(default)]
    pub factor: Option<f64>,
    #[serde(default = "default_gamma_min")]
    pub gamma_min: f64,
    /// Overrides the adaptive penalty when set.
    #[serde(default)]
    pub fixed: Option<f64>,
    #[serde(default = "default_refresh")]
    pub refresh_every: usize,
    /// Multiplier on the L² distance term of the step loss.
    #[serde(default = "default_l2_factor")]
    pub l2_factor: f64,
}

fn default_penalty_mode() -> String {
    "pointwise".into()
}

fn default_gamma_min() -> f64 {
    1.0
}

fn default_refresh() -> usize {
    1
}

fn default_l2_factor() -> f64 {
    1.0
}

impl Default for PenaltySection {
    fn default() -> Self {
        PenaltySection {
            mode: default_penalty_mode(),
            factor: None,
            gamma_min: default_gamma_min(),
            fixed: None,
            refresh_every: default_refresh(),
            l2_factor: default_l2_factor(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct JkoSection {
    pub epsilon: f64,
    pub n_support: usize,
    #[serde(default = "default_sinkhorn_tol")]
    pub sinkhorn_tolerance: f64,
    #[serde(default = "default_sinkhorn_iters")]
    pub sinkhorn_max_iterations: usize,
}

fn default_sinkhorn_tol() -> f64 {
    1e-9
}

fn default_sinkhorn_iters() -> usize {
    50_000
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DgmSection {
    /// Points on the t = 0 slice for the initial-condition term.
    pub n_initial: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_eval_seed")]
    pub seed: u64,
}

fn default_n_test() -> usize {
    2048
}

fn default_eval_seed() -> u64 {
    9099
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_test: default_n_test(),
            seed: default_eval_seed(),
        }
    }
}

fn bad(key: &str, msg: &str) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        ConfigFile::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(bad("name", "must be non-empty"));
        }
        if self.runs.is_empty() {
            return Err(bad("run", "at least one [[run]] table is required"));
        }
        for (i, run) in self.runs.iter().enumerate() {
            run.validate(&format!("run[{i}]"))?;
        }
        for (i, a) in self.runs.iter().enumerate() {
            for b in &self.runs[i + 1..] {
                if a.label == b.label {
                    return Err(bad(
                        &format!("run[{i}].label"),
                        &format!("duplicate label `{}`", a.label),
                    ));
                }
            }
        }
        Ok(())
    }
}

impl RunConfig {
    fn validate(&self, key: &str) -> Result<()> {
        if self.label.is_empty()
            || !self
                .label
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(bad(
                &format!("{key}.label"),
                "must be non-empty and use only [A-Za-z0-9_-]",
            ));
        }
        if self.dim == 0 {
            return Err(bad(&format!("{key}.dim"), "must be at least 1"));
        }
        Activation::parse(&self.architecture.activation)
            .map_err(|_| bad(&format!("{key}.architecture.activation"), "expected relu | tanh | sigmoid"))?;
        if self.architecture.width == 0 {
            return Err(bad(&format!("{key}.architecture.width"), "must be positive"));
        }
        if !(self.time.tau > 0.0) {
            return Err(bad(&format!("{key}.time.tau"), "must be positive"));
        }
        if self.time.n_steps == 0 {
            return Err(bad(&format!("{key}.time.n_steps"), "must be at least 1"));
        }
        if self.sampling.n_interior == 0 {
            return Err(bad(&format!("{key}.sampling.n_interior"), "must be positive"));
        }
        if self.sampling.per_face == 0 {
            return Err(bad(&format!("{key}.sampling.per_face"), "must be positive"));
        }
        validate_stages(&self.training, &format!("{key}.training"))?;
        if let Some(fit) = &self.initial_fit {
            validate_stages(fit, &format!("{key}.initial_fit"))?;
        }
        if let Some(p) = &self.penalty {
            if p.mode != "pointwise" && p.mode != "max" {
                return Err(bad(&format!("{key}.penalty.mode"), "expected pointwise | max"));
            }
            if !(p.l2_factor > 0.0) {
                return Err(bad(&format!("{key}.penalty.l2_factor"), "must be positive"));
            }
            if p.refresh_every == 0 {
                return Err(bad(&format!("{key}.penalty.refresh_every"), "must be at least 1"));
            }
        }
        match self.method {
            Method::Nitsche => {
                if self.initial_fit.is_none() {
                    return Err(bad(
                        &format!("{key}.initial_fit"),
                        "required for method = \"nitsche\"",
                    ));
                }
            }
            Method::Jko => {
                if self.problem != ProblemKind::NeumannProduct {
                    return Err(bad(
                        &format!("{key}.problem"),
                        "method = \"jko\" solves the Neumann heat flow; use problem = \"neumann-product\"",
                    ));
                }
                let jko = self.jko.as_ref().ok_or_else(|| {
                    bad(&format!("{key}.jko"), "required for method = \"jko\"")
                })?;
                if !(jko.epsilon > 0.0) {
                    return Err(bad(&format!("{key}.jko.epsilon"), "must be positive"));
                }
                if jko.n_support < 2 {
                    return Err(bad(&format!("{key}.jko.n_support"), "must be at least 2"));
                }
                if self.initial_fit.is_none() {
                    return Err(bad(
                        &format!("{key}.initial_fit"),
                        "required for method = \"jko\"",
                    ));
                }
                if self.penalty.is_some() {
                    log::warn!("{key}.penalty is ignored for method = \"jko\"");
                }
            }
            Method::Dgm => {
                if self.dgm.is_none() {
                    return Err(bad(&format!("{key}.dgm"), "required for method = \"dgm\""));
                }
                if self.penalty.is_some() {
                    log::warn!("{key}.penalty is ignored for method = \"dgm\"");
                }
                if self.initial_fit.is_some() {
                    log::warn!(
                        "{key}.initial_fit is ignored for method = \"dgm\" (the initial condition is part of the space-time loss)"
                    );
                }
            }
        }
        parse_optimizer(&self.training.optimizer)
            .map_err(|_| bad(&format!("{key}.training.optimizer"), "expected sgd | adam"))?;
        if let Some(fit) = &self.initial_fit {
            parse_optimizer(&fit.optimizer)
                .map_err(|_| bad(&format!("{key}.initial_fit.optimizer"), "expected sgd | adam"))?;
        }
        Ok(())
    }

    pub fn problem(&self) -> Problem {
        match self.problem {
            ProblemKind::DirichletSine => dirichlet_sine(self.dim),
            ProblemKind::NeumannProduct => neumann_product(self.dim),
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let d_in = match self.method {
            Method::Dgm => self.dim + 1, // time is the first input coordinate
            _ => self.dim,
        };
        Architecture::new(
            d_in,
            self.architecture.blocks,
            self.architecture.width,
            Activation::parse(&self.architecture.activation)?,
        )
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.time.tau, self.time.n_steps)
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            n_interior: self.sampling.n_interior,
            per_face: self.sampling.per_face,
            resample_every: self.sampling.resample_every,
        }
    }

    pub fn flow_config(&self) -> Result<FlowConfig> {
        let p = self.penalty.clone().unwrap_or_default();
        let mut penalty = match p.mode.as_str() {
            "max" => PenaltyConfig::max(),
            _ => PenaltyConfig::pointwise(),
        };
        if let Some(f) = p.factor {
            penalty.factor = f;
        }
        penalty.gamma_min = p.gamma_min;
        let mut cfg = FlowConfig::new(schedule(&self.training)?);
        cfg.optimizer = parse_optimizer(&self.training.optimizer)?;
        cfg.penalty = penalty;
        cfg.fixed_penalty = p.fixed;
        cfg.penalty_refresh = p.refresh_every;
        cfg.l2_factor = p.l2_factor;
        cfg.grad_tol = self.training.grad_tol;
        cfg.divergence_factor = self.training.divergence_factor;
        Ok(cfg)
    }

    pub fn jko_config(&self) -> Result<JkoConfig> {
        let sect = self
            .jko
            .as_ref()
            .ok_or_else(|| Error::Config("missing [run.jko] section".into()))?;
        let mut params = SinkhornParams::new(sect.epsilon);
        params.tolerance = sect.sinkhorn_tolerance;
        params.max_iterations = sect.sinkhorn_max_iterations;
        Ok(JkoConfig {
            schedule: schedule(&self.training)?,
            optimizer: parse_optimizer(&self.training.optimizer)?,
            sinkhorn: params,
            grad_tol: self.training.grad_tol,
            divergence_factor: self.training.divergence_factor,
        })
    }

    pub fn dgm_config(&self) -> Result<DgmConfig> {
        let sect = self
            .dgm
            .as_ref()
            .ok_or_else(|| Error::Config("missing [run.dgm] section".into()))?;
        let mut cfg = DgmConfig::new(
            schedule(&self.training)?,
            self.sampling.n_interior,
            self.sampling.per_face,
            sect.n_initial,
        );
        cfg.optimizer = parse_optimizer(&self.training.optimizer)?;
        cfg.resample_every = self.sampling.resample_every;
        cfg.grad_tol = self.training.grad_tol;
        cfg.divergence_factor = self.training.divergence_factor;
        Ok(cfg)
    }

    pub fn initial_fit_schedule(&self) -> Result<(LrSchedule, OptimizerKind, f64)> {
        let fit = self
            .initial_fit
            .as_ref()
            .ok_or_else(|| Error::Config("missing [run.initial_fit] section".into()))?;
        Ok((
            schedule(fit)?,
            parse_optimizer(&fit.optimizer)?,
            fit.grad_tol,
        ))
    }

    pub fn domain(&self) -> BoxDomain {
        self.problem().domain
    }
}

pub fn schedule(sect: &StageSection) -> Result<LrSchedule> {
    LrSchedule::piecewise(sect.stages.iter().map(|s| (s.epochs, s.rate)).collect())
}

pub fn parse_optimizer(name: &str) -> Result<OptimizerKind> {
    match name {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::adam()),
        other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
    }
}

fn validate_stages(sect: &StageSection, key: &str) -> Result<()> {
    if sect.stages.is_empty() {
        return Err(bad(&format!("{key}.stages"), "must contain at least one stage"));
    }
    for (i, s) in sect.stages.iter().enumerate() {
        if s.epochs == 0 {
            return Err(bad(&format!("{key}.stages[{i}].epochs"), "must be positive"));
        }
        if !(s.rate > 0.0) {
            return Err(bad(&format!("{key}.stages[{i}].rate"), "must be positive"));
        }
    }
    Ok(())
}
