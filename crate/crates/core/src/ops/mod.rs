//! Forward/backward kernels on raw buffers. The autodiff graph composes these.

pub mod activation;
pub mod conv;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activation::{Activation, LEAKY_RELU_SLOPE};
pub use conv::{ConvAlgorithm, ConvGeometry};
pub use norm::{NormMode, RunningStats};
pub use pool::PoolKind;
