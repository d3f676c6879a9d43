//! CPU reference implementation of a YOLOv5mu-style detector for
//! smart-home fall detection.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the element type used by the network and the CLI.

pub mod augment;
pub mod dataset;
pub mod detector;
pub mod eval;
pub mod head;
pub mod losses;
pub mod model;
pub mod scalar;
pub mod tensor;

pub use scalar::Scalar;

/// Network activations and weights.
pub type Tensor = tensor::Tensor<f32>;
/// Double-precision tensor, used by tests and oracles.
pub type Tensor64 = tensor::Tensor<f64>;
pub type BBox = head::BBox<f32>;
pub type BBox64 = head::BBox<f64>;
pub type Detection = head::Detection<f32>;
pub type Network = model::Network<f32>;
pub type Detector = detector::Detector<f32>;
pub type EvalDetection = eval::EvalDetection<f64>;
pub type GroundTruth = eval::GroundTruth<f64>;
