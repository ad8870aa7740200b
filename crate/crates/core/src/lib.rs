//! Numerical toolkit for Kolmogorov-Fokker-Planck flows on a Gaussian-weighted
//! line and for the weighted transport distances they contract.

pub mod action;
pub mod densities;
pub mod entropy;
pub mod error;
pub mod flow;
pub mod geodesic;
pub mod grid;
pub mod linalg;
pub mod potentials;
pub mod verify;

pub use entropy::{EntropyDensity, EntropyModel, Mobility};
pub use error::{KfpError, Result};
pub use grid::{build_grid, DensityField, GammaGrid, VectorField};
pub use potentials::Potential;
