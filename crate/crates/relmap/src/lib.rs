//! relmap: run small CNNs forward, explain their classifications with
//! composite layer-wise relevance propagation, and measure how well the
//! resulting relevance maps generalize across models via percentile
//! occlusion experiments and standard statistical tests.

pub mod error;
pub mod finetune;
pub mod lrp;
pub mod net;
pub mod occlusion;
pub mod report;
pub mod scalar;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::TensorBase;

/// The concrete tensor type used by models, file formats, and experiments.
pub type Tensor = TensorBase<f32>;
