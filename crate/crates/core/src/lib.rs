//! Gradient-based saliency maps over a small hand-written convnet, with the
//! Pointing Game evaluation protocols used to judge their faithfulness.

pub mod error;
pub mod eval;
pub mod kernels;
pub mod net;
pub mod pgm;
pub mod saliency;
pub mod synthdata;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
