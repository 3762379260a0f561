//! Simulation and inference for a charge-coupled TLS next to an
//! offset-charge-sensitive transmon.
//!
//! - [`spectra`]: charge-basis transmon, TLS parameters, exact diagonalization.
//! - [`coupling`]: joint Hamiltonians for four coupling models and the shifts they produce.
//! - [`fitting`]: Levenberg–Marquardt engine and the spectroscopy fit models.
//! - [`dynamics`]: joint TLS/parity Markov dynamics and rate inference.
//! - [`protocol`]: the adaptive measure-and-confirm protocol simulator.
//! - [`io`]: file formats.

pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod fitting;
pub mod io;
pub mod protocol;
pub mod spectra;

pub use error::{Error, Result};
