//! Tensors, reverse-mode differentiation, layers and capsule networks.

pub mod capsule;
pub mod error;
pub mod gradcheck;
pub mod models;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};
