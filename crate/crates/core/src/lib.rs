//! Semantic segmentation of surgical instruments with a dilated residual FCN.
//!
//! The crate is organised around the pipeline it implements:
//!
//! * [`tensor_ops`]: reference (64-bit, naive) dilated convolution and bilinear
//!   upsampling, used by tests as oracles for the fast kernels.
//! * [`backbone`]: declarative ResNet model specs, FCN conversion, output-stride
//!   surgery, receptive-field arithmetic and the forward/backward engine.
//! * [`dataset`]: sequence-structured image/mask ingestion, one-hot encoding,
//!   train/validation splits and overlay rendering.
//! * [`training`]: pixel-wise cross-entropy, Adam, the training loop,
//!   learning-rate grid search and checkpoints.
//! * [`metrics`]: confusion counts, binary and IoU reports, evaluation.

pub mod backbone;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod tensor_ops;
pub mod training;

pub use backbone::{ModelSpec, ParamStore};
pub use dataset::{ImageTensor, LabelMask, OneHotMask};
pub use error::{Error, Result};
pub use metrics::ConfusionCounts;
pub use tensor_ops::Tensor;
pub use training::{Checkpoint, TrainingConfig};

/// Version string recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
