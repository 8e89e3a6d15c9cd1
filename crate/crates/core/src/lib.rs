//! Analytic model for memory-bandwidth sharing between groups of threads
//! running different loop kernels on a shared contention domain.
//!
//! The crate bundles:
//!
//! * [`catalog`] — machine and kernel descriptions, preloaded with four
//!   reference machines and fifteen streaming/stencil kernels;
//! * [`ecm`] — single-core runtime composition, the memory request
//!   fraction `f`, and the simplified multicore scaling recursion;
//! * [`sharing`] — the bandwidth-sharing model: mixed saturated bandwidth,
//!   share factors, per-group/per-core predictions, and pairing matrices;
//! * [`sim`] — an independent discrete-event contention oracle that
//!   validates the analytic shares, plus a phase-switching variant for
//!   staggered-completion (sandwich) scenarios;
//! * [`analysis`] — skewness statistics over per-rank duration samples and
//!   the qualitative desynchronization/resynchronization predictor.
//!
//! The crate is `no_std`-compatible (requires `alloc`); disable the default
//! `std` feature for embedded use. All computations are deterministic:
//! identical inputs (including seeds) produce bit-identical outputs.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod analysis;
pub mod catalog;
pub mod ecm;
pub mod sharing;
pub mod sim;

use alloc::string::String;
use core::fmt;

/// Unified error type for model, catalog, and simulator operations.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    /// A named machine is not present in the catalog.
    UnknownMachine(String),
    /// A named kernel is not present in the catalog.
    UnknownKernel(String),
    /// A kernel has no (f, b_s) entry for the requested machine.
    MissingMachinePoint { kernel: String, machine: String },
    /// A catalog invariant does not hold; the message names the field.
    InvalidCatalog(String),
    /// An input value is outside the operation's domain.
    Domain(String),
    /// A measured single-core bandwidth exceeds the saturated bandwidth by
    /// more than the documented 2% tolerance.
    MeasurementInconsistency { b_meas: f64, b_s: f64 },
    /// The kernel spends no time on the memory interface and is therefore
    /// not eligible for the bandwidth-sharing model.
    NotMemoryBound(String),
    /// A kernel declares zero floating-point operations per iteration, so
    /// its per-flop balance is undefined.
    UndefinedCodeBalance(String),
    /// Fewer than three samples or zero variance: skewness is undefined.
    UndefinedSkewness(String),
    /// Simulator configuration error.
    InvalidSimConfig(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::UnknownMachine(n) => write!(f, "unknown machine '{n}'"),
            ModelError::UnknownKernel(n) => write!(f, "unknown kernel '{n}'"),
            ModelError::MissingMachinePoint { kernel, machine } => {
                write!(f, "kernel '{kernel}' has no data for machine '{machine}'")
            }
            ModelError::InvalidCatalog(msg) => write!(f, "invalid catalog: {msg}"),
            ModelError::Domain(msg) => write!(f, "domain error: {msg}"),
            ModelError::MeasurementInconsistency { b_meas, b_s } => write!(
                f,
                "measured bandwidth {b_meas} B/s exceeds saturated bandwidth {b_s} B/s \
                 by more than 2%"
            ),
            ModelError::NotMemoryBound(n) => {
                write!(f, "kernel '{n}' has zero memory-interface time")
            }
            ModelError::UndefinedCodeBalance(n) => {
                write!(f, "kernel '{n}' declares zero flops per iteration")
            }
            ModelError::UndefinedSkewness(msg) => write!(f, "skewness undefined: {msg}"),
            ModelError::InvalidSimConfig(msg) => write!(f, "invalid simulation config: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ModelError {}
