//! Velocity-selective optical pumping in warm alkali vapours.
//!
//! The crate is organised around the experiment pipeline:
//!
//! * [`atomic_data`]: species/transition tables, thermal statistics, lineshapes.
//! * [`pumping`]: velocity-class-resolved rate equations driven by a pulse sequence.
//! * [`spectroscopy`]: weak-probe cross sections and optical-depth spectra.
//! * [`coherence`]: collective-state overlap, dephasing times and memory lifetimes.
//! * [`fitting`]: spectrum and relaxation fits plus parameter sweeps.
//! * [`pipeline`]: a cached pump / pump-back / probe context shared by the above.
//!
//! All quantities are SI internally; angular frequencies are in rad/s.

// `!(x > 0.0)` is used throughout so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atomic_data;
pub mod coherence;
pub mod constants;
mod error;
pub mod faddeeva;
pub mod fitting;
pub mod pipeline;
pub mod pumping;
pub mod spectroscopy;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
