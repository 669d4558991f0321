//! Command-line driver for the gradflow solvers: configuration files,
//! embedded presets, run execution with checkpoint/resume, and report
//! generation. The binary entry point is `gradflow`.

pub mod artifacts;
pub mod config;
pub mod plot;
pub mod presets;
pub mod report;
pub mod run;
