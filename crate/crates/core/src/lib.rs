//! Pseudospectral simulation of the weakly damped, driven cubic Schrödinger
//! equation on the 2π-periodic circle, with diagnostics and space-time norm
//! estimates.

pub mod bourgain;
pub mod diagnostics;
pub mod equations;
pub mod experiments;
pub mod error;
pub mod integrator;
pub mod spectral;

pub use error::{Error, Result};
pub use spectral::{GridSpec, Part, Spectral, SpectralField, C64};
