//! Low-density Lorentz gas: scatterer configurations, billiard and
//! potential-scattering dynamics, collision kernels, the limiting Markov
//! process and the generalized linear Boltzmann equation.

pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod limitprocess;
pub mod quadrature;
pub mod pointsets;
pub mod scattering;
pub mod stats;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
