//! Tensor arithmetic and deterministic random streams.

mod ops;
mod rng;
mod tensor;

pub use ops::{conv2d, conv_out_extent, flatten, log_sum_exp, matmul, mean, max_pool2, relu, softmax};
pub(crate) use ops::{conv2d_bias, max_pool2_with_argmax};
pub use rng::{gauss_sample, Rng};
pub use tensor::Tensor;
