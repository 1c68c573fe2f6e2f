//! Dense arrays and a small reverse-mode autodiff engine.

mod array;
mod check;
mod tape;

pub use array::Array;
pub(crate) use array::gemm;
pub use check::{finite_difference_check, FdReport, FD_SCALE_FLOOR};
pub use tape::{sigmoid, softplus, Inputs, LeafKind, NodeId, Tape, Values};
