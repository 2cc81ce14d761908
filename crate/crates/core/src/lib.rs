//! Noisy-label training at desk scale: label-noise injection, rotation-pretext
//! self-supervised pretraining, dual-network small-loss co-teaching,
//! class-mean re-labeling of large-loss samples, and final single-network
//! training on the augmented set.

pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod schedule;
pub mod selfsup;
pub mod weights;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
