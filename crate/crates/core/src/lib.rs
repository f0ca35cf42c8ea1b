pub mod blocks;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod flops;
pub mod model;
pub mod nn;
pub mod param;
pub mod scalar;
pub mod selftest;
pub mod ssm;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{FmsrError, Result};
pub use scalar::Scalar;
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
