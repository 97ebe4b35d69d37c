//! Dense tensors, a reverse-mode tape, Adam, and a finite-difference checker.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{
    finite_difference_check, finite_difference_check_with, relative_error, CheckOptions,
    GradCheckReport, ParamCheck,
};
pub use params::{Graph, ParamEntry, ParamGrads, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{
    cosine, dot, l2_norm, log_softmax_row, normalize, sigmoid, softmax_row, Real, Tensor,
};
