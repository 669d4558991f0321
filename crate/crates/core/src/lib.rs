//! Neural-network solvers for dissipative evolution PDEs in high dimension:
//! an implicit (minimising-movement) time discretisation trained step by
//! step, with weak Dirichlet boundary enforcement à la Nitsche, a
//! Wasserstein/JKO variant for densities, and a space-time least-squares
//! baseline.

pub mod autodiff;
pub mod domain;
pub mod dgm;
pub mod error;
pub mod flow;
pub mod jko;
pub mod metrics;
pub mod model;
pub mod network;
pub mod nitsche;
pub mod problems;
pub mod sinkhorn;

pub use error::{Error, Result};
