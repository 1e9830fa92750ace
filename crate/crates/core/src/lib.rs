//! Forward models and inverse fits for electronic spin baths of point defects
//! in diamond-like solids.
//!
//! The crate is organised around the path a measurement takes:
//!
//! * [`spinmodel`] builds and exactly diagonalises single-defect spin
//!   Hamiltonians (Zeeman, zero-field splitting, hyperfine, nuclear Zeeman).
//! * [`spectra`] turns eigen-systems into transition line lists and
//!   Lorentzian-broadened DEER/ESR spectra.
//! * [`flipflop`] computes flip-flop suppression factors and the bath
//!   correlation time.
//! * [`decoherence`] predicts Ramsey, echo and DEER decay of the central NV
//!   spin and converts between spin density and dephasing rate.
//! * [`transport`] simulates photo-induced carrier generation, radial
//!   diffusion and capture by multi-charge-state defects.
//! * [`analysis`] fits decays and multi-Lorentzian spectra and assembles
//!   pixel-grouped maps.
//!
//! Internally every frequency is angular (rad/s); line positions and spectra
//! are reported in MHz.

pub mod analysis;
pub mod constants;
pub mod decoherence;
mod error;
pub mod flipflop;
pub mod lsq;
pub mod quadrature;
pub mod spectra;
pub mod spinmodel;
pub mod transport;

pub use error::{Error, Result};
