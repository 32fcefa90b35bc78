//! Minimal reverse-mode differentiation: a tape of eagerly evaluated
//! primitive ops, exactly the layers the effect processor and the state
//! prediction network need, with gradient correctness verifiable against
//! central finite differences.

mod grad_check;
mod params;
mod tape;
mod tensor;

pub use grad_check::{grad_check, relative_error, GradCheckReport, DEFAULT_STEP};
pub use params::{Param, ParamBinding, ParamId, ParamSet};
pub use tape::{hann_window, Gradients, Tape, ValueId};
pub use tensor::{max_abs_diff, Tensor};
