//! Tensors, reference oracles, kernel generators and end-to-end scenarios.

pub mod autoencoder;
pub mod bottleneck;
pub mod conv;
pub mod microbench;
pub mod mobilenet;
pub mod oracle;
pub mod sw;
pub mod tensor;

pub use tensor::{ElemFormat, Layout, Tensor, TensorSpec};
