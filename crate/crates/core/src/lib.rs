//! Power allocation for single-hop SISO interference networks.
//!
//! The crate covers the classic WMMSE block-coordinate-descent solver, its
//! unfolded and learnable counterpart (UWMMSE, a fixed stack of WMMSE layers
//! whose weight update is modulated by graph-convolutional heads), a small
//! MLP baseline, and the per-layer perturbation bound used to check how far
//! the unfolded model's output can move when the channel estimate is off by
//! an entrywise-bounded amount.
//!
//! Everything here is pure computation over `alloc` containers. File formats,
//! parallel campaigns and the command line live in the companion `uwmmse`
//! crate.
#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is the NaN-rejecting form of every range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the per-node formulas.
#![allow(clippy::needless_range_loop, clippy::manual_memcpy)]

extern crate alloc;

pub mod channel;
pub mod error;
pub mod matrix;
pub mod neural;
pub mod optim;
pub mod rng;
pub mod stability;
pub mod uwmmse;
pub mod wmmse;

mod math;

pub use channel::{ChannelMatrix, PerturbationMatrix, PowerAllocation, SystemConfig, Topology};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use uwmmse::{LayerTrace, ModelMode, UwmmseWeights, WUpdate};
pub use wmmse::WmmseState;

/// Denominators with magnitude below this are classified as exactly zero.
pub const DELTA_DEN: f64 = 1e-30;

/// `|1 - u h v|` below this makes the rational weight update near-singular.
pub const DELTA_W: f64 = 1e-12;
