//! Secondary-user power control for spectrum-sharing fading channels.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aipc;
pub mod capacity;
pub mod cli;
pub mod config;
pub mod dual;
pub mod error;
pub mod fading;
pub mod frontier;
pub mod oracle;
pub mod pclc;
pub mod pu;
mod reduce;

pub use error::{Error, Result};
