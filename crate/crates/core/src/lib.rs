//! Simulation and numerics for the Kipnis–Marchioro–Presutti energy model.
//!
//! The crate covers the microscopic side (torus lattice, Markov jump engine,
//! exponential tilts with weight ledgers), the macroscopic side (spectral PDE
//! solvers, optimal controls, cost functionals), the explicit pathological
//! path sequences and the observables that connect the two.

pub mod acceptance;
pub mod cost;
pub mod engine;
pub mod error;
pub mod exec;
pub mod fields;
pub mod lattice;
pub mod metric;
pub mod moments;
pub mod observables;
pub mod paths;
pub mod persist;
pub mod quad;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod tilt;

pub use error::{KmpError, Result};
