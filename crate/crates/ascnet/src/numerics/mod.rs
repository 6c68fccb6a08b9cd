//! Matrix carrier, reverse-mode tape, and gradient checking.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamMap};
pub use matrix::Matrix2;
pub use tape::{BnStats, BnStatsRef, Gradients, NodeId, Tape, COSINE_ZERO_GUARD};

/// Whether a forward pass trains or evaluates. `Eval` disables dropout and
/// makes batch normalization use running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
