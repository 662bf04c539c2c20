//! Zero-shot learning with a conditional variational autoencoder, an
//! over-complete hard-sample generator and online triplet / center losses.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod numgrad;
pub mod ocd;
pub mod train;

pub use error::{Error, Result};
