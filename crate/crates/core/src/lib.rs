//! Pixel-level data augmentation for semantic segmentation.
//!
//! Label maps are split into single-class masks, recombined into new maps
//! (overlay onto existing maps or reconstruction over a banded canvas),
//! rendered into images, mixed into training manifests at a chosen
//! supplementary ratio, and evaluated with per-class IoU. A small softmax
//! pixel classifier and a procedural scene generator make the whole loop
//! runnable at desk scale.
//!
//! Numeric code in [`segmenter`], [`distribution`] and [`eval`] is generic
//! over the scalar type; the aliases below fix the common choices.

pub mod augment;
pub mod distribution;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod generator;
pub mod labelmap;
pub mod mixer;
pub mod num;
pub mod seed;
pub mod segmenter;
pub mod synthworld;

pub use crate::error::{Error, Result};
pub use crate::labelmap::{ClassTable, LabelMap, Mask};

/// Double-precision softmax pixel classifier.
pub type SoftmaxModel = segmenter::SoftmaxModel<f64>;
/// Single-precision softmax pixel classifier.
pub type SoftmaxModelF32 = segmenter::SoftmaxModel<f32>;
/// IoU report with floating-point scores.
pub type IoUReport = eval::IoUReport<f64>;
/// IoU report with exact rational scores.
pub type ExactIoUReport = eval::IoUReport<::num::BigRational>;
/// Appearance-frequency report with floating-point fractions.
pub type FrequencyReport = distribution::FrequencyReport<f64>;
/// Frequency/accuracy correlation with floating-point coefficients.
pub type CorrelationReport = distribution::CorrelationReport<f64>;
