//! Chirped collective Rabi oscillations in light retrieved from a Rydberg
//! quantum memory.
//!
//! The crate has a forward side (closed-form model, inhomogeneous broadening,
//! a mechanistic two-level simulator, Poisson trace synthesis) and an inverse
//! side (peak analysis and weighted nonlinear least squares). Times are in µs,
//! frequencies are angular (rad/µs) unless a name ends in `_mhz`.

// `!(a < b)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod broadening;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod dynamics;
pub mod error;
pub mod fitting;
pub mod io;
pub mod model;
pub mod plot;
pub mod units;

pub use error::{Error, Result};
