//! Dense arrays with exact reverse-mode gradients.

mod audit;
mod params;
mod tape;
mod tensor;

pub use audit::{finite_difference_audit, relative_error, ArrayAudit, AuditReport, Objective};
pub use params::{GradientBundle, ParamId, ParameterSet};
pub use tape::{exp_normalize, neg_log_sigmoid, sigmoid, Activation, Index, Tape, Var};
pub use tensor::Tensor;
