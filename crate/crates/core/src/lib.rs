//! Segmentation from low-resolution inputs against high-resolution ground truth.
//!
//! A U-Net backbone predicts at input resolution; an optional stack of learned
//! 2× up-scaling stages lifts the prediction to the ground-truth resolution and
//! every intermediate prediction is supervised by a multi-scale loss.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below name the concrete instantiations used by the CLI and tests.

pub mod autodiff;
pub mod checkpoint;
pub mod complexity;
pub mod data;
pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod ops;
pub mod optim;
pub mod resample;
pub mod scalar;
pub mod tensor;
pub mod tensor_file;
pub mod train;

pub use error::{Error, Result};
pub use graph::{BackboneConfig, ModelGraph, UpscaleStackConfig};
pub use scalar::Scalar;
pub use tensor::{Mask, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = ModelGraph<f32>;
pub type Model64 = ModelGraph<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Tape64 = autodiff::Tape<f64>;
