//! Top-k sparse autoencoder over backbone embeddings, class activation
//! profiles (CAPs), and energy-profile divergence scoring for
//! out-of-distribution detection.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. File formats,
//! manifests and the command-line driver live in the `caps-ood` crate.
//!
//! Pipeline at a glance:
//!
//! 1. [`sae::train`] fits an [`sae::InputNormalizer`] and a [`sae::SaeModel`]
//!    on ID-train embeddings.
//! 2. [`caps::build_caps`] averages the sparse codes of every class into a
//!    [`caps::CapTable`].
//! 3. [`epd::score_dataset`] compares each test sample's head energy profile
//!    against its predicted class's CAP.
//! 4. [`metrics::auroc`] and [`metrics::fpr95`] summarize ID/OOD separation.
#![no_std]
// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod caps;
pub mod dataset;
pub mod epd;
mod error;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod sae;
pub mod synth;

pub use error::{Error, Result};

/// Number of entries selected by a fraction of `n`: `max(1, ceil(frac * n))`,
/// capped at `n`.
///
/// Products that land within floating-point noise of an integer snap to it,
/// so `0.15 * 640` is 96 and an `f32`-stored `0.05` times 640 is 32.
pub fn fraction_count(frac: f64, n: usize) -> usize {
    let x = frac * n as f64;
    let nearest = libm::round(x);
    let count = if libm::fabs(x - nearest) <= 1e-6 * nearest.max(1.0) {
        nearest
    } else {
        libm::ceil(x)
    };
    (count as usize).clamp(1, n.max(1))
}
