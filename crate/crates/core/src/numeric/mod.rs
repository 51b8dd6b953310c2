//! Dense tensors, reverse-mode gradients and a finite-difference oracle.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    analytic_gradients, grad_check, grad_check_against, relative_error, CheckReport,
    GradCheckConfig, ParamCheck,
};
pub use params::{Gradients, Group, Init, ParamId, ParamStore, Parameter};
pub use tape::{masked_softmax, Tape, Var, MASK_SURROGATE};
pub use tensor::Tensor;
