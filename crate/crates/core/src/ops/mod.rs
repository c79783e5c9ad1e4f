//! Float tensor operations with hand-written backward passes.

mod basic;
mod batchnorm;
mod conv;

pub use basic::{
    add, argmax_rows, avgpool2d, avgpool2d_backward, global_avg_pool, global_avg_pool_backward, linear,
    linear_backward, maxpool2d, maxpool2d_backward, relu, relu_backward, scale_channels, scale_channels_backward,
    softmax_cross_entropy,
};
pub use batchnorm::{
    apply_affine, batchnorm_backward, batchnorm_eval, batchnorm_train, fold_affine, BnCache, BN_EPS, BN_MOMENTUM,
};
pub use conv::{conv2d, conv2d_backward, ConvGeom};

