//! Dense tensors and a reverse-mode tape covering the layers the networks use.

pub mod batchnorm;
pub mod conv;
pub mod graph;
pub mod pool;
pub mod tensor;

pub use batchnorm::{BatchStats, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d, conv2d_transpose, conv_out_len, conv_transpose_out_len, ConvGeom};
pub use graph::{Activation, Gradients, Graph, NodeId};
pub use pool::adaptive_bins;
pub use tensor::{Scalar, Tensor};
