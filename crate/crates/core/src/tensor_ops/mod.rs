//! Reference semantics for the two spatial operators the network relies on.
//!
//! Everything here is deliberately naive: direct nested loops in the precision
//! of the caller (normally `f64`). The fast batched kernels in
//! [`crate::backbone::engine`] are tested against these.

mod conv;
mod tensor;
mod upsample;

pub use conv::{dilated_conv_1d, dilated_conv_2d, DilatedConvSpec};
pub use tensor::Tensor;
pub use upsample::bilinear_upsample;
