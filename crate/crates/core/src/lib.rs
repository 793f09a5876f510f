//! Evaluation of feature attributions by pixel removal.
//!
//! The pipeline ranks pixels by an attribution map, removes the most (MoRF) or
//! least (LeRF) relevant ones, fills them in again and measures how much class
//! information survives, with or without retraining the classifier. The crate
//! also carries the information-theoretic diagnostics that explain why a
//! fixed fill value leaks the mask shape, the Gaussian-process toy world used
//! to check everything end to end, and the debiasing and consistency tools.

pub mod classifiers;
pub mod error;
pub mod evaluation;
pub mod imputation;
pub mod infotheory;
pub mod masking;
pub mod npy;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod toyworld;

pub use error::{Error, Result};
pub use evaluation::EvaluationCurve;
pub use imputation::{ImputationConfig, NoiseScale, Strategy};
pub use masking::{BinaryMask, FeatureVector, Part, RemovalOrder};
pub use tensor::{Dataset, ImageTensor, SaliencyMap};
