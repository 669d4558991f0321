//! Embedded experiment presets.
//!
//! Desk presets finish in minutes on a laptop core and are the budgets the
//! integration tests exercise; paper presets mirror the full published
//! setups (hours to days of training) and are shipped for completeness.

use crate::config::ConfigFile;
use gradflow::{Error, Result};

#[derive(Debug)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub toml: &'static str,
}

pub const TABLE1_DESK: &str = r#"
name = "table1-desk"
description = "Heat equation with Dirichlet data, time-stepped Nitsche energy, reduced budget (d = 2, 3)"

[[run]]
label = "nitsche-d2"
method = "nitsche"
problem = "dirichlet-sine"
dim = 2
seed = 42

[run.architecture]
blocks = 2
width = 20
activation = "tanh"

[run.time]
tau = 0.05
n_steps = 6

[run.sampling]
n_interior = 128
per_face = 16
resample_every = 1

[run.initial_fit]
optimizer = "adam"
stages = [
  { epochs = 1500, rate = 1e-2 },
  { epochs = 1000, rate = 1e-3 },
  { epochs = 500, rate = 1e-4 },
]

[run.training]
optimizer = "adam"
stages = [
  { epochs = 200, rate = 2e-3 },
  { epochs = 100, rate = 5e-4 },
]

[run.penalty]
mode = "pointwise"
fixed = 50.0
l2_factor = 0.5

[[run]]
label = "nitsche-d3"
method = "nitsche"
problem = "dirichlet-sine"
dim = 3
seed = 42

[run.architecture]
blocks = 2
width = 20
activation = "tanh"

[run.time]
tau = 0.05
n_steps = 5

[run.sampling]
n_interior = 192
per_face = 16
resample_every = 1

[run.initial_fit]
optimizer = "adam"
stages = [
  { epochs = 1500, rate = 1e-2 },
  { epochs = 1000, rate = 1e-3 },
  { epochs = 500, rate = 1e-4 },
]

[run.training]
optimizer = "adam"
stages = [
  { epochs = 200, rate = 2e-3 },
  { epochs = 100, rate = 5e-4 },
]

[run.penalty]
mode = "pointwise"
fixed = 72.0
l2_factor = 0.5
"#;

pub const TABLE3_DESK: &str = r#"
name = "table3-desk"
description = "Neumann heat flow via minimising movements in the entropic 2-Wasserstein metric, reduced budget (d = 2, 10)"

[[run]]
label = "jko-d2"
method = "jko"
problem = "neumann-product"
dim = 2
seed = 7

[run.architecture]
blocks = 2
width = 20
activation = "tanh"

[run.time]
tau = 0.01
n_steps = 6

[run.sampling]
n_interior = 200
per_face = 4
resample_every = 1

[run.initial_fit]
optimizer = "adam"
stages = [
  { epochs = 1500, rate = 1e-2 },
  { epochs = 1000, rate = 1e-3 },
]

[run.training]
optimizer = "adam"
stages = [{ epochs = 100, rate = 1e-4 }]

[run.jko]
epsilon = 0.01
n_support = 200

[[run]]
label = "jko-d10"
method = "jko"
problem = "neumann-product"
dim = 10
seed = 7

[run.architecture]
blocks = 2
width = 20
activation = "tanh"

[run.time]
tau = 0.01
n_steps = 3

[run.sampling]
n_interior = 300
per_face = 4
resample_every = 1

[run.initial_fit]
optimizer = "adam"
stages = [
  { epochs = 1500, rate = 1e-2 },
  { epochs = 1000, rate = 1e-3 },
]

[run.training]
optimizer = "adam"
stages = [{ epochs = 100, rate = 1e-4 }]

# squared distances grow with d, so the entropic radius scales up with the
# cost to keep Sinkhorn contractive at float precision; the tolerance is
# relaxed accordingly to keep the iteration count bounded
[run.jko]
epsilon = 0.1
n_support = 300
sinkhorn_tolerance = 1e-8
"#;

pub const DGM_DESK: &str = r#"
name = "dgm-desk"
description = "Space-time least-squares (DGM) baseline on the Dirichlet heat problem, budget matched to table1-desk d = 2"

[[run]]
label = "dgm-d2"
method = "dgm"
problem = "dirichlet-sine"
dim = 2
seed = 42

[run.architecture]
blocks = 2
width = 20
activation = "tanh"

[run.time]
tau = 0.05
n_steps = 6

[run.sampling]
n_interior = 128
per_face = 16
resample_every = 1

# 4800 epochs = the 3000 initial-fit + 6x300 step epochs of the matched
# nitsche-d2 run
[run.training]
optimizer = "adam"
stages = [
  { epochs = 1600, rate = 1e-2 },
  { epochs = 1600, rate = 1e-3 },
  { epochs = 1600, rate = 1e-4 },
]

[run.dgm]
n_initial = 64
"#;

pub const TABLE1_PAPER: &str = r#"
name = "table1-paper"
description = "Full-scale time deep Nitsche runs (days of CPU time; not covered by the test suite)"

[[run]]
label = "nitsche-d2"
method = "nitsche"
problem = "dirichlet-sine"
dim = 2
seed = 42

[run.architecture]
blocks = 3
width = 50
activation = "relu"

[run.time]
tau = 0.01
n_steps = 100

[run.sampling]
n_interior = 1200   # 600 d
per_face = 600
resample_every = 1

[run.initial_fit]
stages = [
  { epochs = 10000, rate = 1e-2 },
  { epochs = 30000, rate = 1e-3 },
  { epochs = 10000, rate = 1e-4 },
]

[run.training]
stages = [
  { epochs = 500, rate = 1e-3 },
  { epochs = 1500, rate = 1e-4 },
]

[run.penalty]
mode = "pointwise"

[[run]]
label = "nitsche-d3"
method = "nitsche"
problem = "dirichlet-sine"
dim = 3
seed = 42

[run.architecture]
blocks = 3
width = 50
activation = "relu"

[run.time]
tau = 0.01
n_steps = 100

[run.sampling]
n_interior = 1800
per_face = 600
resample_every = 1

[run.initial_fit]
stages = [
  { epochs = 10000, rate = 1e-2 },
  { epochs = 30000, rate = 1e-3 },
  { epochs = 10000, rate = 1e-4 },
]

[run.training]
stages = [
  { epochs = 500, rate = 1e-3 },
  { epochs = 1500, rate = 1e-4 },
]

[run.penalty]
mode = "pointwise"
"#;

pub const TABLE3_PAPER: &str = r#"
name = "table3-paper"
description = "Full-scale deep Wasserstein runs (not covered by the test suite)"

[[run]]
label = "jko-d2"
method = "jko"
problem = "neumann-product"
dim = 2
seed = 7

[run.architecture]
blocks = 3
width = 50
activation = "relu"

[run.time]
tau = 0.01
n_steps = 100

[run.sampling]
n_interior = 200  # 100 d
per_face = 4
resample_every = 1

[run.initial_fit]
stages = [
  { epochs = 2000, rate = 1e-3 },
  { epochs = 2000, rate = 1e-4 },
]

[run.training]
stages = [{ epochs = 100, rate = 1e-5 }]

[run.jko]
epsilon = 0.01
n_support = 200
"#;

pub const DGM_PAPER: &str = r#"
name = "dgm-paper"
description = "Full-scale DGM baseline (200k epochs; not covered by the test suite)"

[[run]]
label = "dgm-d2"
method = "dgm"
problem = "dirichlet-sine"
dim = 2
seed = 42

[run.architecture]
blocks = 3
width = 50
activation = "relu"

[run.time]
tau = 0.01
n_steps = 100

[run.sampling]
n_interior = 1800   # 600 (d + 1)
per_face = 600
resample_every = 1

[run.training]
stages = [
  { epochs = 50000, rate = 1e-2 },
  { epochs = 100000, rate = 1e-3 },
  { epochs = 50000, rate = 1e-4 },
]

[run.dgm]
n_initial = 600
"#;

pub fn all() -> Vec<Preset> {
    vec![
        Preset {
            name: "table1-desk",
            description: "Nitsche time-stepping, Dirichlet heat problem, d = 2 and 3, desk budget (~15 min)",
            toml: TABLE1_DESK,
        },
        Preset {
            name: "table3-desk",
            description: "Entropic JKO flow, Neumann heat problem, d = 2 and 10, desk budget (~25 min)",
            toml: TABLE3_DESK,
        },
        Preset {
            name: "dgm-desk",
            description: "DGM space-time baseline, d = 2, budget matched to table1-desk",
            toml: DGM_DESK,
        },
        Preset {
            name: "table1-paper",
            description: "Nitsche time-stepping at full published scale (days of CPU time)",
            toml: TABLE1_PAPER,
        },
        Preset {
            name: "table3-paper",
            description: "Entropic JKO flow at full published scale",
            toml: TABLE3_PAPER,
        },
        Preset {
            name: "dgm-paper",
            description: "DGM baseline at full published scale",
            toml: DGM_PAPER,
        },
    ]
}

pub fn find(name: &str) -> Result<Preset> {
    all()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| {
            let names: Vec<_> = all().iter().map(|p| p.name).collect();
            Error::Config(format!(
                "unknown preset `{name}`; available: {}",
                names.join(", ")
            ))
        })
}

/// Resolve `--config`: a path to a TOML file, or the name of an embedded
/// preset.
pub fn resolve_config(arg: &str) -> Result<ConfigFile> {
    let path = std::path::Path::new(arg);
    if path.exists() {
        ConfigFile::load(path)
    } else if let Ok(preset) = find(arg) {
        ConfigFile::parse(preset.toml)
    } else {
        Err(Error::Config(format!(
            "`{arg}` is neither a config file nor a preset name"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_validates() {
        for preset in all() {
            let file = ConfigFile::parse(preset.toml)
                .unwrap_or_else(|e| panic!("preset {}: {e}", preset.name));
            assert_eq!(file.name, preset.name);
            for run in &file.runs {
                run.architecture().unwrap();
                run.time_grid().unwrap();
            }
        }
    }

    #[test]
    fn unknown_preset_lists_alternatives() {
        let err = find("nope").unwrap_err().to_string();
        assert!(err.contains("table1-desk"));
    }
}
