//! Parameter storage, reverse-mode differentiation, gradient verification,
//! momentum averaging and update rules.

mod ema;
mod gradcheck;
mod optim;
mod params;
mod tape;

pub use ema::ema_update;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ABS_FLOOR};
pub use optim::{Optimizer, StepRule};
pub use params::{ParamLayout, ParamVector, SegRef, Segment};
pub use tape::{backward, backward_weighted, evaluate, forward_record, kernels, Gradients, Tape, Var, GUARD_EPS};
