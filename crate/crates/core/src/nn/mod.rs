//! Dense and convolutional layers with hand-written backward passes.

pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod func;
pub mod gradcheck;
pub mod param;
pub mod pool;
mod tensor;

pub use checkpoint::Checkpoint;
pub use conv::{conv1d_same, conv1d_same_backward, conv2d_same, conv2d_same_backward};
pub use dense::{dense, dense_backward, Activation};
pub use func::{
    dropout, dropout_backward, relu, relu_backward, shannon_index, softmax,
    softmax_entropy_with_grad,
};
pub use gradcheck::grad_check;
pub use param::{adam_step, AdamConfig, Parameter};
pub use pool::{pool1d_max, pool1d_max_backward, pool2d, pool2d_backward, PoolMode, Pooled};
pub use tensor::Tensor;
