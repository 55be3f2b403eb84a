//! Differentiable fluid-structure simulation of soft aquatic swimmers.
//!
//! A learned fluid surrogate on a staggered grid is coupled to an implicit co-rotated
//! finite-element body through a soft boundary mask and Gaussian immersed-boundary forces.
//! Every step of an episode is recorded on a reverse-mode tape, so controller parameters
//! can be optimized with gradients.

// validation compares with `!(x > 0.0)` on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod config;
pub mod coupling;
pub mod episode;
pub mod error;
pub mod fluid;
pub mod io;
pub mod optimize;
pub mod softbody;
pub mod swimmer;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
