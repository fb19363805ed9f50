//! Joint user-activity detection and channel estimation for grant-free
//! massive access over spatially correlated MIMO channels.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`);
//! the aliases below fix the scalar for the common cases.

pub mod amp;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod scalar;
pub mod scenario;
pub mod seed;
pub mod theory;
pub mod validate;

pub use error::{Error, Result};

pub type CMat64 = scalar::CMat<f64>;
pub type CMat32 = scalar::CMat<f32>;
pub type CVec64 = scalar::CVec<f64>;
pub type CVec32 = scalar::CVec<f32>;
pub type CovarianceSet64 = scenario::CovarianceSet<f64>;
pub type CovarianceSet32 = scenario::CovarianceSet<f32>;
pub type PilotMatrix64 = scenario::PilotMatrix<f64>;
pub type PilotMatrix32 = scenario::PilotMatrix<f32>;
pub type AmpSolver64<'a> = amp::AmpSolver<'a, f64>;
pub type AmpSolver32<'a> = amp::AmpSolver<'a, f32>;
pub type AmpReport64 = amp::AmpReport<f64>;
pub type AmpReport32 = amp::AmpReport<f32>;
