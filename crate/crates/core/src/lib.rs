pub mod analysis;
pub mod autograd;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod schedules;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autograd::{BatchNormMode, Graph, RunningStats, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
