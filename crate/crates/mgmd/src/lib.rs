//! Training and privacy evaluation for partitioned GAN ensembles.
//!
//! A model here is a set of k generator/discriminator pairs trained on k
//! disjoint partitions of one training set, with single-pair training and a
//! shared-generator variant as baselines. On top of training the crate
//! provides white-box membership-inference attacks against both network
//! families and score-distribution analysis of the generalization gap that
//! drives those attacks.

pub mod analysis;
pub mod attacks;
pub mod cli;
pub mod data;
pub mod error;
pub mod models;
pub mod numerics;
pub mod objectives;
pub mod training;

pub use error::{Error, Result};
