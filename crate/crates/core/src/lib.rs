//! Positive-unlabeled classification with a classifier-noise-invariant
//! conditional GAN used for data augmentation.

pub mod autodiff;
pub mod cgan;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod pu;
pub mod report;
pub mod trainer;

pub use error::{Error, Result};
