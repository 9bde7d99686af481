//! File formats, manifests, evaluation and the command-line front end for
//! `caps-ood-core`.
// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bytes;
pub mod capfile;
pub mod checkpoint;
pub mod cli;
pub mod emb1;
mod error;
pub mod export;
pub mod manifest;
pub mod pipeline;

pub use caps_ood_core as core;
pub use error::{Error, Result};
