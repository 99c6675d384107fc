//! Losses, the Adam optimizer, the fitting loop and the gradient auditor.

mod adam;
mod audit;
mod fit;
mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use audit::{grad_audit, grad_audit_model, relative_error, AUDIT_STEP};
pub use fit::{evaluate, fit, fit_model, BatchLog, BatchMode, EvalResult, LossKind, TrainConfig, TrainReport, TracePoint};
pub use loss::{loss_bce_logits, loss_mse};
pub(crate) use loss::sigmoid;
