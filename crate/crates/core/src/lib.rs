//! Distributed consensus observer for tracking human-driven vehicles from a
//! network of connected autonomous vehicles, with residual-based fault
//! detection and isolation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fdi;
pub mod gain;
pub mod harness;
pub mod observer;
pub mod topology;
pub mod dynamics;
pub mod matstat;

pub use error::{Error, Result};
