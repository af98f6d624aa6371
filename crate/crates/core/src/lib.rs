//! Stance propagation, behavioral anomaly scoring and bot profiling for
//! microblog discussions.
//!
//! The pipeline runs in stages: a tweet corpus is ingested and cleaned,
//! accounts are seed-labeled from a stance lexicon, a gradient-boosted tree
//! classifier propagates those labels to every account, an Isolation Forest
//! scores each account's behavior, and a three-condition criterion flags bot
//! accounts. The retweet network is partitioned with a degree-corrected
//! stochastic block model to profile bot presence per community.
//!
//! The numeric kernels ([`classifier::gbt`], [`anomaly::iforest`],
//! [`classifier::log_odds_terms`]) are generic over [`Scalar`]; the aliases
//! below fix them to `f64`, which is what the pipeline uses.

// negated comparisons are used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anomaly;
pub mod botcrit;
pub mod classifier;
pub mod corpus;
mod error;
pub mod features;
pub mod netcomm;
pub mod nullmodel;
pub mod pipeline;
mod scalar;
pub mod seeding;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Gradient-boosted tree model over `f64` features.
pub type GbtModel = classifier::gbt::GbtModel<f64>;
/// Gradient-boosted tree model over `f32` features.
pub type GbtModel32 = classifier::gbt::GbtModel<f32>;
/// Isolation Forest over `f64` features.
pub type IsolationForest = anomaly::iforest::IsolationForest<f64>;
/// Isolation Forest over `f32` features.
pub type IsolationForest32 = anomaly::iforest::IsolationForest<f32>;
