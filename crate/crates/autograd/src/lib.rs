//! A compact tape-based reverse-mode automatic differentiation engine.
//!
//! The engine is generic over `f32` and `f64`: networks train in single
//! precision and the same graphs can be rebuilt in double precision for
//! finite-difference gradient checks. Only the operations needed by small
//! image-to-image convolutional networks are provided; matrix products go
//! through `matrixmultiply`.

mod float;
mod ops;
mod optim;
mod tape;
mod tensor;

pub use float::Float;
pub use ops::conv::{col2im, im2col, ConvGeom};
pub use ops::power_iteration;
pub use optim::Adam;
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
