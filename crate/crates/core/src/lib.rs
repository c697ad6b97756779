//! Simulation and analysis toolkit for heralded single-photon stimulation of
//! retinal rod cells.
//!
//! The crate is organised along the physical chain of the experiment:
//!
//! * [`source`]: SPDC pair statistics, gated APD detection and the three
//!   g⁽²⁾ measurement arrangements.
//! * [`timing`]: feed-forward electronics (AOM gate, fiber delay) and the
//!   optical loss budget of the idler arm.
//! * [`rod`]: rod-cell single-photon response model and noisy membrane
//!   current synthesis.
//! * [`analysis`]: amplitude extraction, histograms, Levenberg-Marquardt
//!   fits, criterion detection, Welch's t-test and quantum-efficiency
//!   estimation.
//! * [`harness`], [`config`] and [`io`]: experiment orchestration,
//!   configuration files and dataset persistence.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::too_many_arguments)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod harness;
#[cfg(feature = "fs")]
pub mod io;
pub mod protocol;
pub mod rng;
pub mod rod;
pub mod source;
pub mod timing;

pub use error::{Error, Result};
