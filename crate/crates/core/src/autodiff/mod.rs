//! Dense f64 tensors with a reverse-mode tape.
//!
//! Every forward operation is recorded on a [`Tape`] as it executes; a
//! single [`Tape::backward`] call walks the records in exact reverse order
//! and hands back the gradients of every node that requires one. Shapes are
//! explicit and the only implicit broadcast is a scalar factor.

mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, relative_error, FD_EPSILON};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
