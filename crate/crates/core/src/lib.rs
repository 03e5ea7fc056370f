//! Simulation and verification toolkit for gravitational allocation of a
//! Poisson point process in `R^d`, `d >= 3`: force-field evaluation, flow
//! integration, basin statistics, cubature constructions, and a Monte Carlo
//! harness with reproducible seeds.

pub mod error;
pub mod geom;
pub mod poisson;
pub mod quad;
pub mod rng;
pub mod ewald;
pub mod flow;
pub mod force;
pub mod sample;

pub use error::{GravError, Result};
pub use geom::{CylinderSurface, DomainMode, DomainSpec, Region};
pub use sample::StarField;
