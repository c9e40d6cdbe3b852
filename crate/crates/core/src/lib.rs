//! Dual-teacher semi-supervised training on small dense networks.
//!
//! A single student network is trained against two exponential-moving-average
//! teachers. The sample-scatter teacher supplies keys for a memory-bank
//! InfoNCE objective that spreads samples apart in feature space; the
//! sample-consistency teacher supplies targets for two consistency terms,
//! one on softmax predictions (absolute location) and one on cosine
//! similarities to a pool of reference features (relative location).
//!
//! Everything is f64 and hand-differentiated so each loss can be checked
//! against central finite differences.

// `!(x > floor)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consistency;
pub mod datagen;
pub mod error;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod plot;
pub mod scatter;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Matrix, Rng};
