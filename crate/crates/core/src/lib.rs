//! Linear infrared response functions `R(t) = (i/ħ) Tr{q(t)[q, ρ]}` for coupled
//! anharmonic oscillators.
//!
//! Four routes are provided:
//!
//! * [`quantum`]: exact grid eigensolver and thermal sum over eigenstates,
//! * [`estimators::response_lsc`]: linearized semiclassics (classical Wigner),
//! * [`estimators::response_hk`]: full Herman-Kluk double phase-space integral,
//! * [`estimators::response_hybrid`]: Herman-Kluk for the IR-active system
//!   coordinates, linearized treatment of the bath.
//!
//! All quantities are dimensionless with `ħ = k_B = 1`.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod io;
mod linalg;
pub mod model;
pub mod quantum;
pub mod sampling;
pub mod semiclassics;

pub use error::{Error, Result};
pub use estimators::{Method, ResponseSeries};
pub use model::{ModelSystem, PhasePoint};

/// Reduced Planck constant in the dimensionless unit system used throughout.
pub const HBAR: f64 = 1.0;
