//! Differentiable operators. Every operator is a pure function of its
//! inputs; a backward rule is recorded only when some input is tracked.

mod conv;
mod elementwise;
mod linear;
mod norm;
mod shape;
mod softmax;

pub use conv::{conv3d, conv3d_output_dims, conv_transpose3d};
pub use elementwise::{add, gelu, mean, mul, scale, sum};
pub use linear::{linear, matmul_batched};
pub use norm::{instance_norm, layer_norm, NORM_EPS};
pub use shape::{concat, gather, gather_rows, narrow, permute, reshape};
pub use softmax::softmax;
