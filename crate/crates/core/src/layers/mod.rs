//! Forward and backward passes for every layer of the volumetric classifier.
//!
//! Activations are channel-last: `(N, X, Y, Z, C)` for volumes and `(N, F)`
//! for feature vectors. Backward functions take the forward inputs (or a
//! record produced by the forward pass) and the upstream gradient.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
pub mod gradcheck;
mod loss;
mod pool;

use thiserror::Error;

use crate::tensor::TensorError;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BatchNormGrads, BatchNormState, BN_EPSILON, BN_MOMENTUM,
};
pub use conv::{conv3d_backward, conv3d_forward, conv_output_shape, Conv3dGrads, Conv3dParams, Padding};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseParams};
pub use dropout::{dropout, dropout_backward, DropoutMask};
pub use loss::{bce_loss, BCE_CLAMP};
pub use pool::{
    global_avg_pool, global_avg_pool_backward, maxpool3d_backward, maxpool3d_forward,
    pool_output_extent, PoolRecord, POOL_WINDOW,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Infer,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("spatial extent {extent} on axis {axis} is smaller than {needed}")]
    SpatialTooSmall {
        axis: usize,
        extent: usize,
        needed: usize,
    },
    #[error("pooling record does not match gradient shape {0:?}")]
    StaleRecord(Vec<usize>),
    #[error("batch statistics need at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),
    #[error("dropout rate must lie in [0, 1), got {0}")]
    BadRate(f64),
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub(crate) fn shape_err(what: &str, got: &[usize]) -> LayerError {
    LayerError::ShapeMismatch(format!("{what}, got {got:?}"))
}
