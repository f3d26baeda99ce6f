//! Simulation and analysis toolkit for a quasi-phase-matched SPDC photon-pair
//! source.
//!
//! The crate covers three layers:
//!
//! - closed-form second-harmonic conversion efficiency of a QPM grating and a
//!   bounded least-squares engine to fit it ([`dispersion_qpm`], [`fitting`]);
//! - a seeded Monte Carlo of pair emission, detection and a folded Franson
//!   analyzer ([`pair_source`], [`detection`], [`franson`], [`pipeline`]);
//! - a streaming two-channel time-tag correlator with CAR/PCR extraction
//!   ([`coincidence`]).
//!
//! Times are signed 64-bit femtoseconds, wavelengths are vacuum nanometres at
//! every public boundary and SI internally.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coincidence;
pub mod detection;
pub mod dispersion_qpm;
mod error;
pub mod fitting;
pub mod franson;
pub mod io;
pub mod pair_source;
pub mod pipeline;
pub mod rng;
pub mod units;

pub use error::{Error, Result};
