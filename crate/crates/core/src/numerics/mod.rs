//! Tensor substrate: dense arrays, tape-based reverse-mode differentiation,
//! the operations the model needs, gradient checking, AdamW and checkpoints.

pub mod checkpoint;
mod conv;
pub mod gemm;
pub mod gradcheck;
mod graph;
pub mod ops;
pub mod optim;
mod params;
mod tensor;

pub use conv::conv3x3_hwc_forward;
pub use gradcheck::{finite_diff_check, finite_diff_check_params, ParamCheck};
pub use graph::{Backward, Graph, Var};
pub use optim::{adamw_step, AdamW, OptimizerState};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(not(feature = "f32"))]
pub type Scalar = f64;
#[cfg(feature = "f32")]
pub type Scalar = f32;
