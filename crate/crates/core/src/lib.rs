//! f-DP accounting for mixture mechanisms.
//!
//! The crate computes trade-off curves (type I / type II error frontiers)
//! for shuffled randomized response and for one step of noisy gradient
//! descent from a Gaussian initialization, converts them to (ε, δ) and
//! F-divergence statements, and ships a brute-force likelihood-ratio oracle
//! for checking every closed form.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod dpgd;
pub mod error;
pub mod mixture;
pub mod numeric;
pub mod oracle;
pub mod shuffle;
pub mod tradeoff;

pub use error::{Error, Result};
