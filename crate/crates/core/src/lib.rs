//! Structure-preserving reduced models for inverse source localization in
//! steady advection–diffusion, with geodesic coverage control of mobile
//! sensors.

pub mod autodiff;
pub mod coverage;
pub mod error;
pub mod feec;
pub mod forward;
pub mod geodesy;
pub mod mesh;
pub mod model;
pub mod quadrature;
pub mod rom;
pub mod sparse;
pub mod transport;

pub use error::{Error, Result};
