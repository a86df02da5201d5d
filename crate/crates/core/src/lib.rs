//! Hybrid transformer/CNN 3-D segmentation network with a small
//! reverse-mode autodiff engine.

pub mod autodiff;
pub mod conv_path;
pub mod error;
pub mod loss;
pub mod model;
pub mod params;
pub mod swin3d;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result, Violation};
pub use model::{ModelConfig, PhTrans};
pub use params::{Bound, Init, ParamBuilder, ParamId, ParamSet};
pub use tensor::{DType, Element, Tensor};
