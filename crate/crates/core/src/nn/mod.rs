//! Differentiable operations used by the onset network.
//!
//! Each operation is a pair of free functions: a forward pass returning its
//! output (plus whatever the backward pass needs) and a backward pass mapping
//! an upstream gradient to gradients with respect to the inputs. There is no
//! graph engine; the model wires the pairs together explicitly.

mod activation;
mod batchnorm;
mod conv;
pub mod gradcheck;
mod linear;
mod loss;
mod pool;

pub use activation::{dropout, dropout_backward, relu, relu_backward, DropoutMask};
pub use batchnorm::{batchnorm, batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormState};
pub use conv::{conv3d, conv3d_backward, ConvGrads, ConvSpec};
pub use linear::{concat, linear, linear_backward, split_features};
pub use loss::{l2_penalty, softmax, weighted_soft_xent, LossSpec};
pub use pool::{maxpool2d, maxpool2d_backward, PoolIndices};

/// Train mode uses batch statistics and dropout; eval mode uses running
/// statistics and no dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
