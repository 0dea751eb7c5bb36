//! Batch steganography and pooled steganalysis on synthetic covers.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cover;
pub mod embed;
pub mod error;
pub mod harness;
pub mod pooling;
pub mod report;
pub mod seed;
pub mod sid;
pub mod spreading;

pub use error::{Error, Result};
