//! Numerical laboratory for compressible flow in thin channels: quasi-1D
//! nozzle solvers, an axisymmetric thin-channel Navier–Stokes solver,
//! relative-energy diagnostics and Korn/Poincaré constant estimation.

pub mod cli;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod korn;
pub mod linalg;
pub mod mesh;
pub mod polygon;
pub mod profile;
pub mod quadrature;
pub mod relent;
pub mod solver1d;
pub mod solver_axi;
pub mod thermo;

pub use error::{Error, Result};
