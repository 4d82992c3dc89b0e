//! Dense tensors, a recording tape for reverse-mode gradients, and a
//! central-difference gradient checker.

mod check;
mod tape;
mod tensor;

pub use check::finite_diff_check;
pub use tape::{Gradients, RowLists, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid_scalar;
