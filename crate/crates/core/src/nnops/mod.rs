//! Forward and backward kernels for every layer the EdgeCNN family uses.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod init;
pub mod linear;
pub mod loss;
pub mod pool;

pub use activation::{relu, relu_backward};
pub use batchnorm::{batchnorm, batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNormState, BnCache, BnGrads};
pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvSpec};
pub use linear::{linear, linear_backward, linear_weight_shape, LinearGrads};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_backward};
pub use pool::{
    avgpool2d, avgpool2d_backward, global_avgpool, global_avgpool_backward, maxpool2d, maxpool2d_backward,
    PoolSpec,
};
