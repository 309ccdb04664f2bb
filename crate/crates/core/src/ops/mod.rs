//! Forward and backward kernels for the operators the denoiser uses.

mod batchnorm;
mod conv;
mod loss;
mod relu;

pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormGrads, Mode, RunningStats,
    BN_EPSILON, BN_MOMENTUM,
};
pub use conv::{conv2d_backward, conv2d_forward, Conv2dGrads};
pub use loss::residual_mse_loss;
pub use relu::{relu, relu_backward};
