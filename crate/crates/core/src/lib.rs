//! Simulation and real-time estimation for heralded single-photon homodyne tomography.
//!
//! The crate is organized along the data path:
//!
//! * [`fock`]: photon-number-diagonal states, pair statistics, heralding and loss
//! * [`quadrature`]: quadrature marginals, sampling, vacuum calibration, Wigner cuts
//! * [`detector`]: waveform-level pulsed homodyne detector and digitizer
//! * [`tomography`]: variance and maximum-likelihood estimators
//! * [`report`]: trigger bookkeeping and run summaries
//! * [`pipeline`]: the segment generator shared by the CLI, benchmark and service
//! * [`io`]: the line-oriented quadrature file format
//! * [`fixtures`]: reference values for client-side cross-checks
//! * `service`: the live session and its websocket/HTTP front end (feature `service`)

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod detector;
pub mod error;
pub mod fixtures;
pub mod fock;
pub mod io;
pub mod numeric;
pub mod pipeline;
pub mod quadrature;
pub mod report;
#[cfg(feature = "service")]
pub mod service;
pub mod tomography;

pub use error::{Error, Result};
