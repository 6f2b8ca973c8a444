pub mod alignment;
pub mod data;
pub mod engine;
pub mod error;
pub mod harness;
pub mod networks;
pub mod objective;
pub mod verify;

pub use engine::{Graph, NodeId, Scalar, Tensor};
pub use error::{Error, Result};
