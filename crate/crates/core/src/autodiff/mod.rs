//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Only the primitives the agent needs are provided. Shapes are explicit and
//! the only broadcast is tensor-by-scalar (`mul_scalar`, `div_scalar`).

mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{
    gradcheck, gradcheck_with, relative_error, ElementCheck, GradcheckOptions, GradcheckReport, FD_STEP,
    REL_ERR_FLOOR,
};
pub use param::{ParamGrads, ParamSet, Parameter};
pub use tape::{Boundary, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
