//! Interleaved multi-branch network for image restoration, self-contained:
//! a small autograd tensor engine, the network blocks, degradation
//! pipelines, and L1/Adam training with PSNR/SSIM evaluation.

pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod shape;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};
pub use shape::Shape;
pub use tensor::{backward, Tensor};

pub mod blocks;
pub mod model;
pub mod params;
pub mod checkpoint;
pub mod data;
pub mod image_io;
pub mod metrics;
pub mod train;
