//! Physics-informed spectral models of advection-diffusion fields with
//! Gibbs suppression by double mirror flipping.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod galerkin;
pub mod grid;
pub mod io;
pub mod kalman;
pub mod motion;
pub mod pipeline;
pub mod preprocess;
pub mod simulate;
pub mod spectral;

pub use error::{Error, Result};
