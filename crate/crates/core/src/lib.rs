//! Boundary-driven interacting particle and energy systems with reservoirs:
//! explicit generators, stationary solves, duality with absorbing dual
//! processes, kinetic Monte Carlo, diffusion simulation and macroscopic
//! fluctuation predictions.

pub mod analysis;
pub mod diffusion;
pub mod duality;
pub mod error;
pub mod generator;
pub mod kernel;
pub mod kmc;
mod linalg;
pub mod mft;
pub mod model;
pub mod report;
pub mod rng;
pub mod special;
pub mod stationary;
pub mod stats;
pub mod suites;

pub use error::{Error, Result};
pub use model::{Family, ModelSpec};
