//! Forward and backward kernels for the primitive layers: valid unflipped
//! convolution, max-pooling with argmax, max-unpooling, one-ring zero
//! padding, ReLU, and batch-norm / linear / loss plumbing.

mod activation;
mod batchnorm;
mod conv;
mod linear;
mod loss;
mod pool;

pub use activation::{relu_backward, relu_forward};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, batchnorm_infer, BatchNormCache};
pub use conv::{conv2d_backward, conv2d_forward, ConvKernel};
pub use linear::{linear_backward, linear_forward};
pub use loss::softmax_cross_entropy;
pub use pool::{maxpool_backward, maxpool_forward, maxunpool_forward, pad_one_ring, PoolIndices};
