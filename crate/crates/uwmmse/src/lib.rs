//! File formats, parallel campaigns and the command-line front end built on
//! [`uwmmse_core`].

// `!(x > 0.0)` is the NaN-rejecting form of every range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod campaign;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod provenance;
pub mod report;
pub mod stats;
pub mod svg;
pub mod weights;
