//! Attention-based encoder-decoder speech recognition with speaker adaptation
//! by KLD regularization, adversarial speaker adaptation and multi-task
//! learning, on a synthetic multi-speaker corpus.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod aed;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
